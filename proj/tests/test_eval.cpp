#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "rnica/eval.hpp"

using namespace rnica;

namespace {

Matrix normals(Eigen::Index T, Eigen::Index d, Xoshiro256& rng) {
  Matrix m(T, d);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

// Exhaustive search over permutations.
double brute_force_best(const Matrix& w) {
  std::vector<int> perm(static_cast<std::size_t>(w.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1.0;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += w(static_cast<Eigen::Index>(i), perm[i]);
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(Hungarian, MatchesBruteForce) {
  Xoshiro256 rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const auto n = static_cast<Eigen::Index>(1 + rep % 6);
    Matrix w(n, n);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.uniform();
    const auto a = hungarian_min(-w);
    double s = 0.0;
    std::vector<int> seen(a);
    std::sort(seen.begin(), seen.end());
    for (int i = 0; i < n; ++i) {
      EXPECT_EQ(seen[static_cast<std::size_t>(i)], i);
      s += w(i, a[static_cast<std::size_t>(i)]);
    }
    EXPECT_NEAR(s, brute_force_best(w), 1e-12);
  }
}

TEST(MatchedCorr, IdentityAndSignedPermutation) {
  Xoshiro256 rng(2);
  const Matrix s = normals(500, 4, rng);
  EXPECT_NEAR(matched_mean_abs_corr(s, s).mean, 1.0, 1e-12);
  Matrix est(500, 4);
  est.col(0) = -s.col(2);
  est.col(1) = 3.0 * s.col(0);
  est.col(2) = s.col(3);
  est.col(3) = -0.5 * s.col(1);
  const auto r = matched_mean_abs_corr(est, s);
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
  EXPECT_EQ(r.assignment, (std::vector<int>{2, 0, 3, 1}));
}

TEST(MatchedCorr, AdditiveNoiseGivesInverseRootTwo) {
  Xoshiro256 rng(3);
  const Matrix s = normals(100000, 3, rng);
  const Matrix n = normals(100000, 3, rng);
  const auto r = matched_mean_abs_corr(s + n, s);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.abs_corr(i, r.assignment[static_cast<std::size_t>(i)]), 1.0 / std::sqrt(2.0), 0.01);
}

TEST(MatchedCorr, ZeroVarianceColumnWarns) {
  Xoshiro256 rng(4);
  const Matrix s = normals(100, 2, rng);
  Matrix est = s;
  est.col(1).setConstant(2.0);
  const auto r = matched_mean_abs_corr(est, s);
  EXPECT_EQ(r.abs_corr(1, 0), 0.0);
  EXPECT_EQ(r.abs_corr(1, 1), 0.0);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_THROW(matched_mean_abs_corr(s, normals(100, 3, rng)), ShapeError);
}

// Property: invariance to permutation, sign and positive scaling; matching >= diagonal mean.
TEST(MatchedCorr, InvariancesAndDiagonalBound) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Xoshiro256 rng(seed);
    const Matrix s = normals(300, 4, rng);
    const Matrix est = s * normals(4, 4, rng) + 0.5 * normals(300, 4, rng);
    const auto base = matched_mean_abs_corr(est, s);
    const auto perm = rng.permutation(4);
    Matrix moved(300, 4);
    for (Eigen::Index j = 0; j < 4; ++j)
      moved.col(j) = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 10.0) * est.col(static_cast<Eigen::Index>(perm[j]));
    EXPECT_NEAR(matched_mean_abs_corr(moved, s).mean, base.mean, 1e-12);
    EXPECT_GE(base.mean + 1e-15, base.abs_corr.diagonal().mean());
  }
}

TEST(R2, ExactLinearModelAndNull) {
  Xoshiro256 rng(5);
  const Matrix q = normals(2000, 3, rng);
  Matrix a = normals(3, 3, rng);
  Matrix h = q * a.transpose();
  h.rowwise() += Eigen::RowVector3d(1.0, -2.0, 3.0);
  const auto exact = linear_identifiability_r2(h, q);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(exact.r2[j], 1.0, 1e-10);
  EXPECT_TRUE(exact.warnings.empty());

  const auto null = linear_identifiability_r2(normals(10000, 3, rng), normals(10000, 3, rng));
  EXPECT_LT(null.mean, 0.05);
}

TEST(R2, AffineInvariantAndRankDeficientFallback) {
  Xoshiro256 rng(6);
  const Matrix h = normals(500, 3, rng);
  const Matrix q = h.cwiseAbs() + 0.3 * normals(500, 3, rng);
  const auto base = linear_identifiability_r2(h, q);
  Matrix b = normals(3, 3, rng);
  Matrix h2 = h * b.transpose();
  h2.rowwise() += Eigen::RowVector3d(5.0, 0.0, -1.0);
  const auto moved = linear_identifiability_r2(h2, q);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(moved.r2[j], base.r2[j], 1e-10);

  Matrix dup(500, 4);
  dup << h, h.col(0);
  const auto r = linear_identifiability_r2(dup, q);
  EXPECT_FALSE(r.warnings.empty());
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.r2[j], base.r2[j], 1e-10);
}
