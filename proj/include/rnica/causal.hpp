#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rnica/datagen.hpp"
#include "rnica/error.hpp"
#include "rnica/eval.hpp"
#include "rnica/fastica.hpp"
#include "rnica/matrix.hpp"
#include "rnica/preprocess.hpp"
#include "rnica/random.hpp"
#include "rnica/train.hpp"

namespace rnica {

struct HsicResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int permutations = 0;
  double bandwidth_a = 0.0;
  double bandwidth_b = 0.0;
};

namespace detail {

inline double median_distance(const Vector& a) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(a.size() * (a.size() - 1) / 2));
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = i + 1; j < a.size(); ++j) {
      const double v = std::abs(a[i] - a[j]);
      if (v > 0.0) d.push_back(v);
    }
  if (d.empty()) throw InputError("hsic: constant series");
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

inline Eigen::MatrixXd gaussian_gram(const Vector& a, double sigma) {
  const Eigen::Index n = a.size();
  Eigen::MatrixXd k(n, n);
  const double c = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-c * (a[i] - a[j]) * (a[i] - a[j]));
  return k;
}

// H K H with H = I - 11^T / n.
inline Eigen::MatrixXd double_center(Eigen::MatrixXd k) {
  const Eigen::VectorXd row = k.rowwise().mean();
  const Eigen::RowVectorXd col = k.colwise().mean();
  const double all = k.mean();
  k.colwise() -= row;
  k.rowwise() -= col;
  k.array() += all;
  return k;
}

}  // namespace detail

/// Permutations of 0..n-1, drawn up front so every test that shares them is
/// reproducible and order-independent.
inline std::vector<std::vector<std::size_t>> permutation_list(std::size_t n, int count, std::uint64_t seed) {
  auto rng = make_stream(seed, "hsic-permutations");
  std::vector<std::vector<std::size_t>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int p = 0; p < count; ++p) out.push_back(rng.permutation(n));
  return out;
}

/// Biased HSIC (1/n^2) tr(K H L H), Gaussian kernels, median-heuristic
/// bandwidths, permutation p-value (1 + #{stat_perm >= stat}) / (P + 1).
inline HsicResult hsic_test(const Vector& a, const Vector& b, const std::vector<std::vector<std::size_t>>& perms) {
  const Eigen::Index n = a.size();
  if (b.size() != n) throw ShapeError("hsic_test: series lengths differ");
  if (n < 50) throw InputError("hsic_test: need at least 50 samples");
  if (!a.allFinite() || !b.allFinite()) throw InputError("hsic_test: non-finite input");
  HsicResult r;
  r.bandwidth_a = detail::median_distance(a);
  r.bandwidth_b = detail::median_distance(b);
  const Eigen::MatrixXd kc = detail::double_center(detail::gaussian_gram(a, r.bandwidth_a));
  const Eigen::MatrixXd l = detail::gaussian_gram(b, r.bandwidth_b);
  const double inv_n2 = 1.0 / static_cast<double>(n * n);
  r.statistic = std::max(0.0, (kc.array() * l.array()).sum() * inv_n2);
  r.permutations = static_cast<int>(perms.size());
  int exceed = 0;
  for (const auto& p : perms) {
    if (static_cast<Eigen::Index>(p.size()) != n) throw ShapeError("hsic_test: permutation length");
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto pi = static_cast<Eigen::Index>(p[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < n; ++j) s += kc(i, j) * l(pi, static_cast<Eigen::Index>(p[static_cast<std::size_t>(j)]));
    }
    if (s * inv_n2 >= r.statistic) ++exceed;
  }
  r.p_value = (1.0 + exceed) / (1.0 + static_cast<double>(perms.size()));
  return r;
}

inline HsicResult hsic_test(const Vector& a, const Vector& b, int permutations = 500, std::uint64_t seed = 1) {
  return hsic_test(a, b, permutation_list(static_cast<std::size_t>(a.size()), permutations, seed));
}

enum class Direction { x1_to_x2, x2_to_x1, inconclusive };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::x1_to_x2: return "x1->x2";
    case Direction::x2_to_x1: return "x2->x1";
    case Direction::inconclusive: return "inconclusive";
  }
  return "?";
}

struct DirectionVerdict {
  Direction verdict = Direction::inconclusive;
  // p-values of HSIC(x_i, n_j), indexed [i][j] with 0-based i, j.
  double p[2][2] = {{1.0, 1.0}, {1.0, 1.0}};
  double level = 0.05;
};

/// x1 -> x2 iff x1 is independent of n2 while (x1, n1), (x2, n1), (x2, n2) are
/// all dependent; mirrored for x2 -> x1. n1 is the disturbance matched to x1.
inline DirectionVerdict decide_direction(const Vector& x1, const Vector& x2, const Vector& n1, const Vector& n2,
                                         double level = 0.05, int permutations = 500, std::uint64_t seed = 1) {
  DirectionVerdict v;
  v.level = level;
  const auto perms = permutation_list(static_cast<std::size_t>(x1.size()), permutations, seed);
  const Vector* xs[2] = {&x1, &x2};
  const Vector* ns[2] = {&n1, &n2};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) v.p[i][j] = hsic_test(*xs[i], *ns[j], perms).p_value;
  const auto dep = [&](int i, int j) { return v.p[i][j] < level; };
  if (!dep(0, 1) && dep(0, 0) && dep(1, 0) && dep(1, 1))
    v.verdict = Direction::x1_to_x2;
  else if (!dep(1, 0) && dep(1, 1) && dep(0, 0) && dep(0, 1))
    v.verdict = Direction::x2_to_x1;
  return v;
}

// ---------------------------------------------------------------- SEM pipeline

/// x1 = n1, x2 = coefficient * x1^3 + n2 with segment-modulated Laplace
/// disturbances. `reverse` swaps the observed columns so the truth is x2 -> x1.
struct SemSpec {
  int segments = 16;
  int segment_length = 512;
  double coefficient = 0.5;
  double scale_lo = 0.05;
  double scale_hi = 0.7;
  bool reverse = false;
  ContaminationSpec contamination;
  std::uint64_t seed = 1;
};

struct SemData {
  Matrix x;                      // T x 2 observed
  Matrix n;                      // T x 2 disturbances, column i drives x column i
  Matrix n_clean;
  std::vector<int> labels;
  std::vector<std::uint8_t> outlier_mask;
  Direction truth = Direction::x1_to_x2;
};

inline SemData generate_sem(const SemSpec& spec) {
  const auto src = gen_segmented_sources(
      SegmentedSourceSpec{2, spec.segments, spec.segment_length, spec.scale_lo, spec.scale_hi, spec.seed});
  auto con = spec.contamination;
  if (con.eps > 0.0) con.seed = spec.seed;
  const auto c = contaminate(src.sources, src.labels, con);
  SemData d;
  d.labels = src.labels;
  d.outlier_mask = c.mask;
  d.n_clean = src.sources;
  d.n = c.sources;
  d.x.resize(d.n.rows(), 2);
  d.x.col(0) = d.n.col(0);
  d.x.col(1) = spec.coefficient * d.n.col(0).array().cube().matrix() + d.n.col(1);
  if (spec.reverse) {
    d.x.col(0).swap(d.x.col(1));
    d.n.col(0).swap(d.n.col(1));
    d.n_clean.col(0).swap(d.n_clean.col(1));
    d.truth = Direction::x2_to_x1;
  }
  return d;
}

struct CausalConfig {
  TrainConfig train;
  WhiteningOptions whitening;
  int hsic_samples = 300;
  int permutations = 500;
  double level = 0.05;

  void validate() const {
    train.validate();
    if (!is_segment_method(train.method)) throw ConfigError("causal.method", "must be tcl or rtcl");
    if (hsic_samples < 50) throw ConfigError("causal.hsic_samples", "must be >= 50");
    if (permutations < 1) throw ConfigError("causal.permutations", "must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("causal.level", "must lie in (0, 1)");
  }
};

struct CausalResult {
  DirectionVerdict verdict;
  Direction truth = Direction::inconclusive;
  std::vector<int> assignment;       // component -> observed variable
  double match_corr = 0.0;           // mean |corr| of components with |x - median|
  double disturbance_corr = 0.0;     // mean matched |corr| of components with |n_clean|
  std::vector<LossTraceRow> trace;
};

inline Vector abs_deviation_from_median(const Eigen::Ref<const Vector>& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  auto mid = s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2);
  std::nth_element(s.begin(), mid, s.end());
  return (v.array() - *mid).abs().matrix();
}

/// whiten -> (R)TCL -> FastICA -> match components to variables -> HSIC tests
/// on a random subsample.
inline CausalResult run_causal_pipeline(const SemData& data, const CausalConfig& cfg) {
  cfg.validate();
  const Eigen::Index T = data.x.rows();
  if (cfg.hsic_samples > T) throw ConfigError("causal.hsic_samples", "exceeds series length");
  CausalResult out;
  out.truth = data.truth;
  const auto wt = fit_whitening(data.x, cfg.whitening);
  const Matrix xw = apply_whitening(wt, data.x);
  const auto trained = train_tcl_rtcl(xw, data.labels, cfg.train);
  out.trace = trained.trace;
  const auto ica = fastica(predict(trained.model.net, xw), FastIcaOptions{500, 1e-6, cfg.train.seed});

  Matrix spread(T, 2);
  for (int i = 0; i < 2; ++i) spread.col(i) = abs_deviation_from_median(data.x.col(i));
  const auto m = matched_mean_abs_corr(ica.components, spread);
  out.assignment = m.assignment;
  out.match_corr = m.mean;
  out.disturbance_corr = matched_mean_abs_corr(ica.components, data.n_clean.cwiseAbs()).mean;

  Matrix n_hat(T, 2);
  for (int c = 0; c < 2; ++c) n_hat.col(m.assignment[static_cast<std::size_t>(c)]) = ica.components.col(c);

  auto rng = make_stream(cfg.train.seed, "hsic-subsample");
  auto idx = rng.permutation(static_cast<std::size_t>(T));
  idx.resize(static_cast<std::size_t>(cfg.hsic_samples));
  std::sort(idx.begin(), idx.end());
  Matrix xs(cfg.hsic_samples, 2), ns(cfg.hsic_samples, 2);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    xs.row(static_cast<Eigen::Index>(k)) = data.x.row(static_cast<Eigen::Index>(idx[k]));
    ns.row(static_cast<Eigen::Index>(k)) = n_hat.row(static_cast<Eigen::Index>(idx[k]));
  }
  out.verdict = decide_direction(xs.col(0), xs.col(1), ns.col(0), ns.col(1), cfg.level, cfg.permutations,
                                 cfg.train.seed);
  return out;
}

inline json to_json(const CausalResult& r) {
  return {{"verdict", to_string(r.verdict.verdict)},
          {"truth", to_string(r.truth)},
          {"level", r.verdict.level},
          {"p_x1_n1", r.verdict.p[0][0]},
          {"p_x1_n2", r.verdict.p[0][1]},
          {"p_x2_n1", r.verdict.p[1][0]},
          {"p_x2_n2", r.verdict.p[1][1]},
          {"assignment", r.assignment},
          {"match_corr", r.match_corr},
          {"disturbance_corr", r.disturbance_corr}};
}

}  // namespace rnica
