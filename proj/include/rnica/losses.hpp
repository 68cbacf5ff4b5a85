#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rnica/error.hpp"
#include "rnica/matrix.hpp"

namespace rnica {

// gamma-cross-entropy objectives for contrastive nonlinear ICA.
//
// Scores are log-density-ratio values z = log r. Binary task: positives are
// z(x(t), u(t)), negatives z(x(t), u_p(t)) with u_p a permutation. Multiclass
// task: logits z[t, k] = log r(k, x(t)) with labels in 0..K-1.
//
// Everything is evaluated in the log domain: sigmoid powers are computed as
// exp(c * log_sigmoid(.)) and batch sums as log-sum-exp, so scores of
// magnitude several hundred stay finite.

enum class LossTask { binary_pair, multiclass };

struct GammaLossSpec {
  double gamma = 1.0;
  LossTask task = LossTask::binary_pair;
  int classes = 2;  // multiclass only

  void validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma must be finite and >= 0");
    if (task == LossTask::multiclass && classes < 2) throw ParameterError("multiclass needs K >= 2");
  }
};

struct BinaryLossResult {
  double loss = 0.0;
  std::vector<double> d_positive;
  std::vector<double> d_negative;
};

struct MulticlassLossResult {
  double loss = 0.0;
  Matrix d_logits;
};

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double log_sigmoid(double x) { return -softplus(-x); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {

inline void check_binary(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty()) throw InputError("empty batch");
  if (pos.size() != neg.size()) throw InputError("positive and negative score counts differ");
  for (double z : pos)
    if (!std::isfinite(z)) throw InputError("non-finite positive score");
  for (double z : neg)
    if (!std::isfinite(z)) throw InputError("non-finite negative score");
}

inline void check_multiclass(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw InputError("empty batch");
  if (logits.cols() < 2) throw InputError("multiclass logits need K >= 2 columns");
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw InputError("label count mismatch");
  for (int u : labels)
    if (u < 0 || u >= logits.cols()) throw InputError("label out of range: " + std::to_string(u));
  if (!logits.allFinite()) throw InputError("non-finite logit");
}

/// Row log-sum-exp with max subtraction.
inline double row_lse(const Eigen::Ref<const Eigen::RowVectorXd>& y) {
  const double m = y.maxCoeff();
  double s = 0.0;
  for (Eigen::Index k = 0; k < y.size(); ++k) s += std::exp(y[k] - m);
  return m + std::log(s);
}

}  // namespace detail

/// Exact logistic cross entropy of the balanced binary task, averaged over all 2T terms.
inline BinaryLossResult baseline_binary_ce(std::span<const double> pos, std::span<const double> neg) {
  detail::check_binary(pos, neg);
  const std::size_t n = pos.size();
  const double inv = 1.0 / static_cast<double>(2 * n);
  BinaryLossResult r;
  r.d_positive.resize(n);
  r.d_negative.resize(n);
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    sum += softplus(-pos[t]) + softplus(neg[t]);
    r.d_positive[t] = -sigmoid(-pos[t]) * inv;
    r.d_negative[t] = sigmoid(neg[t]) * inv;
  }
  r.loss = sum * inv;
  return r;
}

/// Exact softmax cross entropy, averaged over samples.
inline MulticlassLossResult baseline_multiclass_ce(const Matrix& logits, std::span<const int> labels) {
  detail::check_multiclass(logits, labels);
  const Eigen::Index n = logits.rows();
  const double inv = 1.0 / static_cast<double>(n);
  MulticlassLossResult r;
  r.d_logits.resize(n, logits.cols());
  double sum = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double lse = detail::row_lse(logits.row(t));
    sum += lse - logits(t, labels[t]);
    r.d_logits.row(t) = (logits.row(t).array() - lse).exp() * inv;
    r.d_logits(t, labels[t]) -= inv;
  }
  r.loss = sum * inv;
  return r;
}

/// Empirical binary gamma-cross entropy
///   -(1/g) log[ (1/2T) sum_t ( sig((g+1) z+_t)^{g/(g+1)} + sig(-(g+1) z-_t)^{g/(g+1)} ) ]
/// with exact score gradients. gamma == 0 is the exact logistic cross entropy.
inline BinaryLossResult gamma_binary_loss(std::span<const double> pos, std::span<const double> neg,
                                          double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma must be finite and >= 0");
  if (gamma == 0.0) return baseline_binary_ce(pos, neg);
  detail::check_binary(pos, neg);

  const std::size_t n = pos.size();
  const double g1 = gamma + 1.0;
  const double power = gamma / g1;
  std::vector<double> terms(2 * n);
  for (std::size_t t = 0; t < n; ++t) {
    terms[t] = power * log_sigmoid(g1 * pos[t]);
    terms[n + t] = power * log_sigmoid(-g1 * neg[t]);
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += std::exp(v - m);
  const double lse = m + std::log(s);

  BinaryLossResult r;
  r.loss = -(lse - std::log(static_cast<double>(2 * n))) / gamma;
  r.d_positive.resize(n);
  r.d_negative.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double wp = std::exp(terms[t] - lse);
    const double wn = std::exp(terms[n + t] - lse);
    r.d_positive[t] = -wp * sigmoid(-g1 * pos[t]);
    r.d_negative[t] = wn * sigmoid(g1 * neg[t]);
  }
  return r;
}

/// Empirical multiclass gamma-cross entropy
///   -(1/g) log[ (1/T) sum_t exp( g z[t,u_t] - (g/(g+1)) LSE_k((g+1) z[t,k]) ) ]
/// with exact logit gradients. gamma == 0 is the exact softmax cross entropy.
inline MulticlassLossResult gamma_multiclass_loss(const Matrix& logits, std::span<const int> labels,
                                                  double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma must be finite and >= 0");
  if (gamma == 0.0) return baseline_multiclass_ce(logits, labels);
  detail::check_multiclass(logits, labels);

  const Eigen::Index n = logits.rows();
  const double g1 = gamma + 1.0;
  const double power = gamma / g1;
  std::vector<double> terms(static_cast<std::size_t>(n));
  Matrix soft(n, logits.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const Eigen::RowVectorXd y = g1 * logits.row(t);
    const double lse = detail::row_lse(y);
    soft.row(t) = (y.array() - lse).exp();
    terms[static_cast<std::size_t>(t)] = gamma * logits(t, labels[t]) - power * lse;
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += std::exp(v - m);
  const double lse_t = m + std::log(s);

  MulticlassLossResult r;
  r.loss = -(lse_t - std::log(static_cast<double>(n))) / gamma;
  r.d_logits.resize(n, logits.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const double w = std::exp(terms[static_cast<std::size_t>(t)] - lse_t);
    r.d_logits.row(t) = w * soft.row(t);
    r.d_logits(t, labels[t]) -= w;
  }
  return r;
}

/// Spec-driven entry points.
inline BinaryLossResult gamma_binary_loss(std::span<const double> pos, std::span<const double> neg,
                                          const GammaLossSpec& spec) {
  spec.validate();
  if (spec.task != LossTask::binary_pair) throw ParameterError("spec task is not binary_pair");
  return gamma_binary_loss(pos, neg, spec.gamma);
}

inline MulticlassLossResult gamma_multiclass_loss(const Matrix& logits, std::span<const int> labels,
                                                  const GammaLossSpec& spec) {
  spec.validate();
  if (spec.task != LossTask::multiclass) throw ParameterError("spec task is not multiclass");
  if (logits.cols() != spec.classes) throw ShapeError("logit columns do not match spec classes");
  return gamma_multiclass_loss(logits, labels, spec.gamma);
}

struct NuEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo estimate of the outlier-leakage integral
///   nu = eps * E_delta[ sig((g+1) z)^{g/(g+1)} ]
/// from log-ratio scores evaluated on outlier samples. Scores may be -inf (r = 0).
/// Diagnostic only; it is never part of a training objective.
inline NuEstimate estimate_nu(std::span<const double> outlier_scores, double eps, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("estimate_nu: gamma must be > 0 (nu is a nonzero constant at gamma = 0)");
  if (!(eps >= 0.0 && eps < 1.0)) throw ParameterError("estimate_nu: eps must lie in [0, 1)");
  if (eps == 0.0) return {};
  if (outlier_scores.empty()) throw InputError("estimate_nu: no outlier scores");
  const double g1 = gamma + 1.0;
  const double power = gamma / g1;
  double sum = 0.0, sum2 = 0.0;
  for (double z : outlier_scores) {
    if (std::isnan(z)) throw InputError("estimate_nu: NaN score");
    const double v = std::exp(power * log_sigmoid(g1 * z));
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(outlier_scores.size());
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum2 - n * mean * mean) / (n - 1)) : 0.0;
  return {eps * mean, eps * std::sqrt(var / n)};
}

}  // namespace rnica
