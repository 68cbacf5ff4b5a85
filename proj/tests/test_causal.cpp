#include <gtest/gtest.h>

#include "rnica/causal.hpp"

using namespace rnica;

namespace {

Vector uniforms(Xoshiro256& rng, int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform();
  return v;
}

Vector normals(Xoshiro256& rng, int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

TEST(Hsic, IdenticalSeriesGetSmallestPValue) {
  auto rng = make_stream(3, "t");
  const Vector a = normals(rng, 120);
  const auto r = hsic_test(a, a, 199, 5);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 200.0);
  EXPECT_EQ(r.permutations, 199);
  EXPECT_GT(r.statistic, 0.0);
}

TEST(Hsic, QuadraticDependenceDetected) {
  auto rng = make_stream(4, "t");
  const Vector a = normals(rng, 500);
  const Vector b = a.array().square().matrix() + 0.1 * normals(rng, 500);
  // linear correlation is near zero here; HSIC still sees it
  EXPECT_LT(hsic_test(a, b, 200, 1).p_value, 0.01);
}

TEST(Hsic, NullPValuesLookUniform) {
  auto rng = make_stream(5, "t");
  const auto perms = permutation_list(100, 100, 9);
  double mean = 0.0;
  int reject = 0;
  const int trials = 60;
  for (int t = 0; t < trials; ++t) {
    const auto r = hsic_test(uniforms(rng, 100), uniforms(rng, 100), perms);
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
    mean += r.p_value / trials;
    reject += r.p_value < 0.05;
  }
  EXPECT_NEAR(mean, 0.5, 0.12);
  EXPECT_LE(reject, 9);
}

TEST(Hsic, AffineRescalingLeavesStatisticUnchanged) {
  auto rng = make_stream(6, "t");
  const Vector a = normals(rng, 80);
  const Vector b = (a.array() * a.array().abs()).matrix() + normals(rng, 80);
  const auto perms = permutation_list(80, 50, 2);
  const auto r0 = hsic_test(a, b, perms);
  const auto r1 = hsic_test((3.0 * a.array() - 7.0).matrix(), (-0.2 * b.array() + 1.5).matrix(), perms);
  EXPECT_NEAR(r1.statistic, r0.statistic, 1e-12);
  EXPECT_DOUBLE_EQ(r1.p_value, r0.p_value);
  EXPECT_NEAR(r1.bandwidth_a, 3.0 * r0.bandwidth_a, 1e-12);
}

TEST(Hsic, ReproducibleGivenSeed) {
  auto rng = make_stream(7, "t");
  const Vector a = normals(rng, 90);
  const Vector b = a.array().sin().matrix() + normals(rng, 90);
  const auto r0 = hsic_test(a, b, 100, 11);
  const auto r1 = hsic_test(a, b, 100, 11);
  EXPECT_EQ(r0.statistic, r1.statistic);
  EXPECT_EQ(r0.p_value, r1.p_value);
}

TEST(Hsic, Errors) {
  auto rng = make_stream(8, "t");
  const Vector a = normals(rng, 60);
  EXPECT_THROW(hsic_test(a, Vector::Constant(60, 2.0), 10, 1), InputError);
  EXPECT_THROW(hsic_test(a, normals(rng, 59), 10, 1), ShapeError);
  EXPECT_THROW(hsic_test(a.head(40), a.head(40), 10, 1), InputError);
}

TEST(Direction, KnownDisturbancesGiveForwardVerdict) {
  auto rng = make_stream(10, "t");
  const int n = 300;
  Vector n1(n), n2(n);
  for (int i = 0; i < n; ++i) {
    n1[i] = rng.laplace(1.0);
    n2[i] = rng.laplace(1.0);
  }
  const Vector x1 = n1;
  const Vector x2 = 0.5 * x1.array().cube().matrix() + n2;
  const auto v = decide_direction(x1, x2, n1, n2, 0.05, 200, 1);
  EXPECT_EQ(v.verdict, Direction::x1_to_x2);
  EXPECT_GE(v.p[0][1], 0.05);

  const auto m = decide_direction(x2, x1, n2, n1, 0.05, 200, 1);
  EXPECT_EQ(m.verdict, Direction::x2_to_x1);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_EQ(m.p[i][j], v.p[1 - i][1 - j]);
}

TEST(Direction, IndependentEverythingIsInconclusive) {
  auto rng = make_stream(11, "t");
  const int n = 150;
  const auto v = decide_direction(normals(rng, n), normals(rng, n), normals(rng, n), normals(rng, n), 0.05, 100, 1);
  EXPECT_EQ(v.verdict, Direction::inconclusive);
}

TEST(Direction, AllDependentIsInconclusive) {
  auto rng = make_stream(12, "t");
  const Vector z = normals(rng, 150);
  const Vector x1 = z + 0.1 * normals(rng, 150);
  const Vector x2 = z.array().square().matrix() + 0.1 * normals(rng, 150);
  const auto v = decide_direction(x1, x2, x1, x2, 0.05, 100, 1);
  EXPECT_EQ(v.verdict, Direction::inconclusive);
}

TEST(Sem, ReverseSwapsColumnsAndTruth) {
  SemSpec s;
  s.segments = 4;
  s.segment_length = 64;
  const auto f = generate_sem(s);
  s.reverse = true;
  const auto r = generate_sem(s);
  EXPECT_EQ(f.truth, Direction::x1_to_x2);
  EXPECT_EQ(r.truth, Direction::x2_to_x1);
  EXPECT_EQ(f.x.col(0), r.x.col(1));
  EXPECT_EQ(f.x.col(1), r.x.col(0));
  EXPECT_NEAR((f.x.col(1) - 0.5 * f.x.col(0).array().cube().matrix() - f.n.col(1)).cwiseAbs().maxCoeff(), 0.0,
              1e-12);
}

TEST(Causal, ConfigValidation) {
  CausalConfig c;
  c.train.method = Method::pcl;
  EXPECT_THROW(c.validate(), ConfigError);
  c.train.method = Method::rtcl;
  c.level = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.level = 0.05;
  c.hsic_samples = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Causal, SmallPipelineRunsAndIsDeterministic) {
  SemSpec s;
  s.segments = 8;
  s.segment_length = 128;
  s.seed = 2;
  const auto d = generate_sem(s);
  CausalConfig c;
  c.train.method = Method::rtcl;
  c.train.epochs = 20;
  c.train.warm_start_epochs = 10;
  c.train.learning_rate = 1e-2;
  c.train.seed = 2;
  c.hsic_samples = 100;
  c.permutations = 50;
  const auto a = run_causal_pipeline(d, c);
  const auto b = run_causal_pipeline(d, c);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  ASSERT_EQ(a.assignment.size(), 2u);
  EXPECT_NE(a.assignment[0], a.assignment[1]);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      EXPECT_GT(a.verdict.p[i][j], 0.0);
      EXPECT_LE(a.verdict.p[i][j], 1.0);
    }
  EXPECT_EQ(a.truth, Direction::x1_to_x2);
}
