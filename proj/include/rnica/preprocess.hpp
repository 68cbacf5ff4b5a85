#pragma once

#include <cmath>
#include <string>

#include "rnica/checkpoint.hpp"
#include "rnica/error.hpp"
#include "rnica/matrix.hpp"

namespace rnica {

enum class WhiteningMethod { standard_zca, robust_gamma };

inline const char* to_string(WhiteningMethod m) {
  return m == WhiteningMethod::standard_zca ? "standard_zca" : "robust_gamma";
}

inline WhiteningMethod whitening_method_from_string(const std::string& s) {
  if (s == "standard_zca") return WhiteningMethod::standard_zca;
  if (s == "robust_gamma") return WhiteningMethod::robust_gamma;
  throw ConfigError("preprocess.method", "unknown whitening method '" + s + "'");
}

struct WhiteningOptions {
  WhiteningMethod method = WhiteningMethod::standard_zca;
  double gamma_w = 0.2;
  int iterations = 20;
};

struct WhiteningTransform {
  Vector mean;
  Matrix matrix;  // d x d, applied as (x - mean) W^T
  WhiteningOptions options;
};

/// Per-sample weights exp(-(g/2) m^2) with m the Mahalanobis distance under (mu, sigma).
inline Vector robust_weights(const Matrix& x, const Vector& mu, const Matrix& sigma, double gamma_w) {
  const Matrix w = inverse_sqrt_spd(sigma);
  Matrix c = x;
  c.rowwise() -= mu.transpose();
  const Matrix y = c * w.transpose();
  return (-0.5 * gamma_w * y.rowwise().squaredNorm().array()).exp().matrix();
}

namespace detail {

// Fixed point of the gamma-divergence Gaussian location/scatter estimator.
// The (1 + g) factor makes it consistent at the uncontaminated normal.
inline void robust_moments(const Matrix& x, double gamma_w, int iterations, Vector& mu, Matrix& sigma) {
  mu = column_mean(x);
  sigma = covariance(x);
  for (int it = 0; it < iterations; ++it) {
    Vector w = robust_weights(x, mu, sigma, gamma_w);
    const double total = w.sum();
    if (!(total > 0.0)) throw NumericalError("robust whitening: all weights vanished");
    w /= total;
    mu = x.transpose() * w;
    Matrix c = x;
    c.rowwise() -= mu.transpose();
    sigma = (1.0 + gamma_w) * (c.transpose() * w.asDiagonal() * c);
  }
}

}  // namespace detail

inline WhiteningTransform fit_whitening(const Matrix& x, const WhiteningOptions& opt = {}) {
  if (x.rows() <= x.cols()) throw InputError("fit_whitening: need more samples than dimensions");
  require_finite(x, "fit_whitening input");
  if (opt.method == WhiteningMethod::robust_gamma && !(opt.gamma_w > 0.0))
    throw ParameterError("fit_whitening: gamma_w must be > 0");
  if (opt.iterations < 0) throw ParameterError("fit_whitening: iterations must be >= 0");

  WhiteningTransform t;
  t.options = opt;
  Matrix sigma;
  if (opt.method == WhiteningMethod::standard_zca) {
    t.mean = column_mean(x);
    sigma = covariance(x);
  } else {
    detail::robust_moments(x, opt.gamma_w, opt.iterations, t.mean, sigma);
  }
  t.matrix = inverse_sqrt_spd(sigma);
  return t;
}

inline Matrix apply_whitening(const WhiteningTransform& t, const Matrix& x) {
  if (x.cols() != t.matrix.cols()) throw ShapeError("apply_whitening: dimension mismatch");
  Matrix c = x;
  c.rowwise() -= t.mean.transpose();
  return c * t.matrix.transpose();
}

inline json whitening_to_json(const WhiteningTransform& t) {
  return {{"kind", "whitening"},
          {"method", to_string(t.options.method)},
          {"gamma_w", t.options.gamma_w},
          {"iterations", t.options.iterations},
          {"mean", vector_to_json(t.mean)},
          {"matrix", matrix_to_json(t.matrix)}};
}

inline WhiteningTransform whitening_from_json(const json& j) {
  if (j.value("kind", std::string{}) != "whitening") throw InputError("not a whitening document");
  WhiteningTransform t;
  t.options.method = whitening_method_from_string(j.at("method").get<std::string>());
  t.options.gamma_w = j.at("gamma_w").get<double>();
  t.options.iterations = j.at("iterations").get<int>();
  t.mean = vector_from_json(j.at("mean"));
  t.matrix = matrix_from_json(j.at("matrix"));
  if (t.matrix.rows() != t.matrix.cols() || t.matrix.cols() != t.mean.size())
    throw ShapeError("whitening document: inconsistent dims");
  return t;
}

}  // namespace rnica
