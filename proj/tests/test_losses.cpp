#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rnica/gradcheck.hpp"
#include "rnica/losses.hpp"
#include "rnica/random.hpp"

using namespace rnica;

namespace {

// Direct transcription with r = exp(z), used as an oracle independent of the
// log-domain implementation. Only valid for moderate |z|.
double naive_binary(const std::vector<double>& pos, const std::vector<double>& neg, double g) {
  const double a = g / (g + 1.0);
  double s = 0.0;
  for (double z : pos) {
    const double R = std::pow(std::exp(z), g + 1.0);
    s += std::pow(R / (1.0 + R), a);
  }
  for (double z : neg) {
    const double R = std::pow(std::exp(z), g + 1.0);
    s += std::pow(1.0 / (1.0 + R), a);
  }
  return -std::log(s / (2.0 * static_cast<double>(pos.size()))) / g;
}

double naive_multiclass(const Matrix& z, const std::vector<int>& labels, double g) {
  const double a = g / (g + 1.0);
  double s = 0.0;
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    double denom = 0.0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) denom += std::pow(std::exp(z(t, k)), g + 1.0);
    s += std::pow(std::exp(z(t, labels[t])), g) / std::pow(denom, a);
  }
  return -std::log(s / static_cast<double>(z.rows())) / g;
}

std::vector<double> normals(std::size_t n, Xoshiro256& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST(GammaBinary, UniformScoresClosedForm) {
  const std::vector<double> zeros(6, 0.0);
  EXPECT_NEAR(gamma_binary_loss(zeros, zeros, 1.0).loss, std::log(2.0) / 2.0, 1e-12);
  EXPECT_NEAR(gamma_binary_loss(zeros, zeros, 1.0).loss, 0.34657359, 1e-8);
  for (double g : {0.1, 0.5, 1.0, 5.0})
    EXPECT_NEAR(gamma_binary_loss(zeros, zeros, g).loss, std::log(2.0) / (g + 1.0), 1e-12) << g;
}

TEST(GammaBinary, SmallGammaApproachesLogisticCrossEntropy) {
  const std::vector<double> zeros(4, 0.0);
  EXPECT_NEAR(gamma_binary_loss(zeros, zeros, 1e-6).loss, std::log(2.0), 1e-5);
}

TEST(GammaBinary, HandEvaluatedFourTerms) {
  const std::vector<double> pos = {0.3, -0.1}, neg = {0.2, -0.5};
  const double got = gamma_binary_loss(pos, neg, 0.5).loss;
  EXPECT_NEAR(got, 0.41346066907054839, 1e-13);  // 30-digit scalar evaluation
  EXPECT_NEAR(got, naive_binary(pos, neg, 0.5), 1e-13);
}

TEST(GammaBinary, MatchesNaiveOracleOnRandomBatches) {
  Xoshiro256 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const auto pos = normals(9, rng, 2.0), neg = normals(9, rng, 2.0);
    for (double g : {0.1, 1.0, 3.0}) EXPECT_NEAR(gamma_binary_loss(pos, neg, g).loss, naive_binary(pos, neg, g), 1e-11);
  }
}

TEST(GammaBinary, GradientsMatchCentralDifferences) {
  Xoshiro256 rng(23);
  for (double g : {0.0, 0.2, 1.0, 5.0}) {
    const auto pos = normals(5, rng, 1.5), neg = normals(5, rng, 1.5);
    const auto r = gamma_binary_loss(pos, neg, g);
    std::vector<double> theta = pos, analytic = r.d_positive;
    theta.insert(theta.end(), neg.begin(), neg.end());
    analytic.insert(analytic.end(), r.d_negative.begin(), r.d_negative.end());
    auto res = check_gradient(theta, analytic, [&](std::span<const double> t) {
      return gamma_binary_loss(t.first(5), t.subspan(5), g).loss;
    });
    EXPECT_LT(res.max_relative_error, 1e-6) << "gamma " << g;
  }
}

TEST(GammaBinary, StaysFiniteForHugeScores) {
  const std::vector<double> pos = {500.0, -500.0, 3.0}, neg = {-500.0, 500.0, 0.0};
  for (double g : {0.0, 0.5, 1.0, 10.0}) {
    const auto r = gamma_binary_loss(pos, neg, g);
    EXPECT_TRUE(std::isfinite(r.loss)) << g;
    for (double d : r.d_positive) EXPECT_TRUE(std::isfinite(d));
    for (double d : r.d_negative) EXPECT_TRUE(std::isfinite(d));
  }
  // The naive route overflows on the same input.
  EXPECT_FALSE(std::isfinite(naive_binary({800.0}, {800.0}, 1.0)));
}

TEST(GammaBinary, ErrorPaths) {
  const std::vector<double> one = {0.0}, empty;
  EXPECT_THROW(gamma_binary_loss(one, one, -0.1), ParameterError);
  EXPECT_THROW(gamma_binary_loss(empty, empty, 1.0), InputError);
  EXPECT_THROW(gamma_binary_loss(one, std::vector<double>{0.0, 1.0}, 1.0), InputError);
  GammaLossSpec spec{1.0, LossTask::multiclass, 3};
  EXPECT_THROW(gamma_binary_loss(one, one, spec), ParameterError);
}

TEST(GammaMulticlass, UniformLogitsClosedForm) {
  for (int K : {2, 4, 10}) {
    const Matrix z = Matrix::Constant(7, K, 0.37);
    std::vector<int> labels(7);
    for (int t = 0; t < 7; ++t) labels[t] = t % K;
    for (double g : {0.1, 0.5, 1.0, 5.0})
      EXPECT_NEAR(gamma_multiclass_loss(z, labels, g).loss, std::log(K) / (g + 1.0), 1e-12);
  }
  const Matrix z = Matrix::Zero(4, 4);
  const std::vector<int> labels = {0, 1, 2, 3};
  EXPECT_NEAR(gamma_multiclass_loss(z, labels, 1.0).loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(gamma_multiclass_loss(z, labels, 1e-6).loss, std::log(4.0), 1e-5);
}

TEST(GammaMulticlass, ThreeSampleHandEvaluation) {
  Matrix z(3, 2);
  z << 1, 0, 0, 1, 0.5, 0.5;
  const std::vector<int> labels = {0, 1, 0};
  const double got = gamma_multiclass_loss(z, labels, 0.3).loss;
  EXPECT_NEAR(got, 0.29733990900115127, 1e-13);
  EXPECT_NEAR(got, naive_multiclass(z, labels, 0.3), 1e-13);
}

TEST(GammaMulticlass, GradientsMatchCentralDifferences) {
  Xoshiro256 rng(31);
  for (double g : {0.0, 0.3, 1.0, 4.0}) {
    Matrix z(6, 4);
    for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = 1.5 * rng.normal();
    const std::vector<int> labels = {0, 3, 2, 1, 1, 0};
    const auto r = gamma_multiclass_loss(z, labels, g);
    std::vector<double> theta(z.data(), z.data() + z.size());
    auto res = check_gradient(theta, std::span<const double>(r.d_logits.data(), r.d_logits.size()),
                              [&](std::span<const double> t) {
                                Matrix zz = Eigen::Map<const Matrix>(t.data(), 6, 4);
                                return gamma_multiclass_loss(zz, labels, g).loss;
                              });
    EXPECT_LT(res.max_relative_error, 1e-6) << "gamma " << g;
  }
}

TEST(GammaMulticlass, StaysFiniteForHugeLogits) {
  Matrix z(2, 3);
  z << 500, -500, 0, -500, 499, 500;
  const std::vector<int> labels = {1, 0};
  for (double g : {0.0, 1.0, 5.0}) {
    const auto r = gamma_multiclass_loss(z, labels, g);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_TRUE(r.d_logits.allFinite());
  }
}

TEST(GammaMulticlass, ErrorPaths) {
  const Matrix z = Matrix::Zero(2, 3);
  EXPECT_THROW(gamma_multiclass_loss(z, std::vector<int>{0, 3}, 1.0), InputError);
  EXPECT_THROW(gamma_multiclass_loss(z, std::vector<int>{0}, 1.0), InputError);
  EXPECT_THROW(gamma_multiclass_loss(z, std::vector<int>{0, 1}, -1.0), ParameterError);
  EXPECT_THROW(gamma_multiclass_loss(z, std::vector<int>{0, 1}, GammaLossSpec{1.0, LossTask::multiclass, 4}),
               ShapeError);
}

TEST(Baseline, ClosedForms) {
  const std::vector<double> zeros(3, 0.0);
  EXPECT_NEAR(baseline_binary_ce(zeros, zeros).loss, std::log(2.0), 1e-15);
  const Matrix z = Matrix::Zero(5, 3);
  EXPECT_NEAR(baseline_multiclass_ce(z, std::vector<int>{0, 1, 2, 0, 1}).loss, std::log(3.0), 1e-15);
}

TEST(Baseline, GammaLimitConsistency) {
  Xoshiro256 rng(99);
  for (int rep = 0; rep < 100; ++rep) {
    const auto pos = normals(16, rng, 2.0), neg = normals(16, rng, 2.0);
    EXPECT_NEAR(gamma_binary_loss(pos, neg, 1e-6).loss, baseline_binary_ce(pos, neg).loss, 1e-5);
    Matrix z(12, 5);
    for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = 2.0 * rng.normal();
    std::vector<int> labels(12);
    for (auto& u : labels) u = static_cast<int>(rng.below(5));
    EXPECT_NEAR(gamma_multiclass_loss(z, labels, 1e-6).loss, baseline_multiclass_ce(z, labels).loss, 1e-5);
  }
}

TEST(Nu, ClosedFormsAndErrors) {
  const std::vector<double> zeros(100, 0.0);
  EXPECT_EQ(estimate_nu(zeros, 0.0, 1.0).value, 0.0);
  EXPECT_NEAR(estimate_nu(zeros, 0.1, 1.0).value, 0.1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(estimate_nu(zeros, 0.1, 1.0).value, 0.07071, 1e-5);
  EXPECT_THROW(estimate_nu(zeros, 0.1, 0.0), ParameterError);
  EXPECT_THROW(estimate_nu(zeros, 1.0, 1.0), ParameterError);
}

// Target uniform on [0,1], outliers uniform on [2,3]. With r = r* the ratio
// vanishes on the outlier support, so nu-hat is exactly zero; a perturbed
// ratio r* + 0.01 leaks, and leaks less for larger gamma.
TEST(Nu, SeparatedUniformSupports) {
  const double eps = 0.1;
  Xoshiro256 rng(5);
  std::vector<double> exact, perturbed;
  for (int i = 0; i < 100000; ++i) {
    const double x = rng.uniform(2.0, 3.0);
    const double target = (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0;
    const double px = (1.0 - eps) * target + eps * ((x >= 2.0 && x <= 3.0) ? 1.0 : 0.0);
    const double r_star = (1.0 - eps) * target / px;
    exact.push_back(std::log(r_star));
    perturbed.push_back(std::log(r_star + 0.01));
  }
  EXPECT_EQ(estimate_nu(exact, eps, 1.0).value, 0.0);
  EXPECT_EQ(estimate_nu(exact, eps, 0.1).value, 0.0);
  EXPECT_LT(estimate_nu(perturbed, eps, 1.0).value, estimate_nu(perturbed, eps, 0.1).value);
}
