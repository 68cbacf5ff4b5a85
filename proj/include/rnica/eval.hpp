#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rnica/checkpoint.hpp"
#include "rnica/error.hpp"
#include "rnica/fastica.hpp"
#include "rnica/matrix.hpp"
#include "rnica/train.hpp"

namespace rnica {

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method,
/// O(n^3) potentials form). Returns row -> column.
inline std::vector<int> hungarian_min(const Matrix& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.cols() != cost.rows()) throw ShapeError("hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct MatchResult {
  Matrix abs_corr;              // estimates x truth, entries in [0, 1]
  std::vector<int> assignment;  // estimate i -> truth assignment[i]
  double mean = 0.0;
  std::vector<std::string> warnings;
};

/// |Pearson| between every estimate column and every truth column, then the
/// maximum-weight one-to-one matching.
inline MatchResult matched_mean_abs_corr(const Matrix& estimates, const Matrix& truth) {
  if (estimates.rows() != truth.rows() || estimates.cols() != truth.cols())
    throw ShapeError("matched_mean_abs_corr: estimates and truth differ in shape");
  if (estimates.rows() < 2) throw InputError("matched_mean_abs_corr: need at least two samples");
  const Eigen::Index d = truth.cols();
  MatchResult r;
  auto flag_constant = [&](const Matrix& m, const char* name) {
    for (Eigen::Index j = 0; j < d; ++j)
      if (m.col(j).maxCoeff() == m.col(j).minCoeff())
        r.warnings.push_back(std::string(name) + " column " + std::to_string(j) + " has zero variance");
  };
  flag_constant(estimates, "estimate");
  flag_constant(truth, "truth");
  r.abs_corr.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) r.abs_corr(i, j) = std::abs(pearson(estimates.col(i), truth.col(j)));
  r.assignment = hungarian_min(-r.abs_corr);
  for (Eigen::Index i = 0; i < d; ++i) r.mean += r.abs_corr(i, r.assignment[static_cast<std::size_t>(i)]);
  r.mean /= static_cast<double>(d);
  return r;
}

struct R2Result {
  Vector r2;
  double mean = 0.0;
  std::vector<std::string> warnings;
};

/// OLS of each target column on [features, 1]; coefficient of determination per column.
inline R2Result linear_identifiability_r2(const Matrix& features, const Matrix& targets) {
  if (features.rows() != targets.rows()) throw ShapeError("linear_identifiability_r2: length mismatch");
  const Eigen::Index T = features.rows();
  Eigen::MatrixXd design(T, features.cols() + 1);
  design.leftCols(features.cols()) = features;
  design.col(features.cols()).setOnes();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
  R2Result r;
  if (cod.rank() < design.cols())
    r.warnings.push_back("design matrix rank " + std::to_string(cod.rank()) + " < " +
                         std::to_string(design.cols()) + "; using pseudo-inverse");
  r.r2.resize(targets.cols());
  for (Eigen::Index j = 0; j < targets.cols(); ++j) {
    const Eigen::VectorXd y = targets.col(j);
    const Eigen::VectorXd fit = design * cod.solve(y);
    const double ss_res = (y - fit).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).square().sum();
    r.r2[j] = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  }
  r.mean = r.r2.mean();
  return r;
}

struct EvalReport {
  MatchResult match;
  R2Result r2;
  bool fastica_converged = true;
  int fastica_iterations = 0;
};

inline json to_json(const EvalReport& e) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < e.match.abs_corr.rows(); ++i) {
    rows.emplace_back();
    for (Eigen::Index j = 0; j < e.match.abs_corr.cols(); ++j) rows.back().push_back(e.match.abs_corr(i, j));
  }
  std::vector<std::string> warnings = e.match.warnings;
  warnings.insert(warnings.end(), e.r2.warnings.begin(), e.r2.warnings.end());
  return {{"mean_abs_corr", e.match.mean},
          {"assignment", e.match.assignment},
          {"abs_corr", rows},
          {"r2", std::vector<double>(e.r2.r2.data(), e.r2.r2.data() + e.r2.r2.size())},
          {"mean_r2", e.r2.mean},
          {"fastica_converged", e.fastica_converged},
          {"fastica_iterations", e.fastica_iterations},
          {"warnings", warnings}};
}

/// Segment methods: FastICA of the abs-activated features h(x) against |s|
/// (clean sources); R^2 of |s| on h(x).
inline EvalReport evaluate_segment_features(const Matrix& h, const Matrix& s_clean, std::uint64_t seed) {
  EvalReport rep;
  const Matrix q = s_clean.cwiseAbs();
  const auto ica = fastica(h, FastIcaOptions{500, 1e-6, seed});
  rep.fastica_converged = ica.converged;
  rep.fastica_iterations = ica.iterations;
  rep.match = matched_mean_abs_corr(ica.components, q);
  rep.r2 = linear_identifiability_r2(h, q);
  return rep;
}

/// Pair methods: raw h(x) against s (clean sources); R^2 of s on h(x).
inline EvalReport evaluate_pair_features(const Matrix& h, const Matrix& s_clean) {
  EvalReport rep;
  rep.match = matched_mean_abs_corr(h, s_clean);
  rep.r2 = linear_identifiability_r2(h, s_clean);
  return rep;
}

}  // namespace rnica
