#pragma once

#include <cmath>

#include "rnica/error.hpp"
#include "rnica/matrix.hpp"
#include "rnica/random.hpp"

namespace rnica {

struct FastIcaOptions {
  int max_iter = 500;
  double tol = 1e-6;
  std::uint64_t seed = 1;
};

struct FastIcaResult {
  Matrix unmixing;    // applied to centred input: s = (x - mean) W^T
  Vector mean;
  Matrix components;  // T x d, unit covariance
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// (W W^T)^{-1/2} W
inline Matrix symmetric_decorrelation(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w * w.transpose());
  const Vector ev = es.eigenvalues().cwiseMax(1e-300);
  const Eigen::MatrixXd inv_sqrt = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                                   es.eigenvectors().transpose();
  return inv_sqrt * w;
}

inline Matrix random_rotation(Eigen::Index d, Xoshiro256& rng) {
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign-fix so the draw is Haar distributed.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace detail

/// Symmetric fixed-point FastICA with the tanh (log cosh) contrast, run on
/// internally whitened features.
inline FastIcaResult fastica(const Matrix& features, const FastIcaOptions& opt = {}) {
  const Eigen::Index T = features.rows(), d = features.cols();
  if (d < 2) throw InputError("fastica: need at least two features");
  if (T <= d) throw InputError("fastica: need more samples than features");
  require_finite(features, "fastica input");

  FastIcaResult res;
  res.mean = column_mean(features);
  Matrix xc = features;
  xc.rowwise() -= res.mean.transpose();
  const Matrix k = inverse_sqrt_spd(covariance(xc));
  const Matrix z = xc * k.transpose();

  auto rng = make_stream(opt.seed, "fastica");
  Matrix w = detail::random_rotation(d, rng);
  const double inv_t = 1.0 / static_cast<double>(T);
  for (res.iterations = 1; res.iterations <= opt.max_iter; ++res.iterations) {
    const Matrix y = z * w.transpose();
    const Matrix g = y.array().tanh().matrix();
    const Vector gp = (1.0 - g.array().square()).matrix().colwise().mean().transpose();
    Matrix w_new = inv_t * (g.transpose() * z) - gp.asDiagonal() * w;
    w_new = detail::symmetric_decorrelation(w_new);
    const double lim = (1.0 - (w_new * w.transpose()).diagonal().array().abs()).abs().maxCoeff();
    w = std::move(w_new);
    if (lim < opt.tol) {
      res.converged = true;
      break;
    }
  }
  res.iterations = std::min(res.iterations, opt.max_iter);
  res.unmixing = w * k;
  res.components = z * w.transpose();
  return res;
}

}  // namespace rnica
