#include <gtest/gtest.h>

#include <cmath>

#include "rnica/checkpoint.hpp"
#include "rnica/gradcheck.hpp"
#include "rnica/network.hpp"

using namespace rnica;

namespace {

Layer make_layer(Activation act, Matrix w, Vector b, double slope = 0.2) {
  Layer l;
  l.activation = act;
  l.weight = std::move(w);
  l.bias = std::move(b);
  l.slope = slope;
  return l;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Xoshiro256& rng) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

// Sum of upstream-weighted outputs: L = sum(seed .* f(x)), so dL/dout = seed.
double seeded_loss(const FeatureNetwork& net, const Matrix& x, const Matrix& seed, GradientBundle* g) {
  auto fr = forward(net, x);
  if (g) *g = backward(net, fr.tape, seed);
  return fr.output.cwiseProduct(seed).sum();
}

}  // namespace

TEST(Forward, IdentityLayerPassesInputThrough) {
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::identity, Matrix::Identity(3, 3), Vector::Zero(3)));
  Matrix x(2, 3);
  x << 1.5, -2.0, 0.25, 3.0, 0.0, -7.0;
  EXPECT_EQ(forward(net, x).output, x);
}

TEST(Forward, MaxoutOfPlusMinusIsAbs) {
  Matrix w(2, 1);
  w << 1.0, -1.0;
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::maxout2, w, Vector::Zero(2)));
  Matrix x(4, 1);
  x << -3.0, -0.5, 0.0, 2.25;
  EXPECT_EQ(forward(net, x).output, x.cwiseAbs());
}

TEST(Forward, TwoLayerHandComputed) {
  // z1 = (-1, 2, 1, 1) -> maxout (1, 2) -> identity layer -> (-0.5, 2)
  Matrix w1(4, 2);
  w1 << 1, -1, 0.5, 0.5, 2, 0, -1, 1;
  Vector b1(4);
  b1 << 0, 0.5, -1, 0;
  Matrix w2(2, 2);
  w2 << 1, -1, 2, 0.5;
  Vector b2(2);
  b2 << 0.5, -1;
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::maxout2, w1, b1));
  net.layers.push_back(make_layer(Activation::identity, w2, b2));
  Matrix x(1, 2);
  x << 1, 2;
  const Matrix out = forward(net, x).output;
  EXPECT_DOUBLE_EQ(out(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);
}

TEST(Forward, RejectsBadInput) {
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::identity, Matrix::Identity(2, 2), Vector::Zero(2)));
  EXPECT_THROW(forward(net, Matrix::Zero(3, 3)), ShapeError);
  Matrix x = Matrix::Zero(1, 2);
  x(0, 1) = std::nan("");
  EXPECT_THROW(forward(net, x), InputError);
}

TEST(Forward, IsBitDeterministic) {
  Xoshiro256 rng(7);
  auto net = make_network(3, {{8, Activation::maxout2}, {8, Activation::maxout2}, {3, Activation::abs}}, rng);
  const Matrix x = random_matrix(50, 3, rng);
  EXPECT_EQ(forward(net, x).output, forward(net, x).output);
}

TEST(Forward, MaxoutWithEqualGroupsIsAffine) {
  Xoshiro256 rng(3);
  const Matrix w = random_matrix(4, 3, rng);
  const Vector b = random_matrix(4, 1, rng).col(0);
  Matrix stacked(8, 3);
  stacked << w, w;
  Vector bb(8);
  bb << b, b;
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::maxout2, stacked, bb));
  const Matrix x = random_matrix(10, 3, rng);
  Matrix expected = x * w.transpose();
  expected.rowwise() += b.transpose();
  EXPECT_EQ(forward(net, x).output, expected);
}

TEST(Network, ValidateRejectsInteriorAbs) {
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::abs, Matrix::Identity(2, 2), Vector::Zero(2)));
  net.layers.push_back(make_layer(Activation::identity, Matrix::Identity(2, 2), Vector::Zero(2)));
  EXPECT_THROW(net.validate(), InputError);
  FeatureNetwork bad;
  bad.layers.push_back(make_layer(Activation::leaky_relu, Matrix::Identity(2, 2), Vector::Zero(2)));
  bad.layers.push_back(make_layer(Activation::identity, Matrix::Identity(3, 3), Vector::Zero(3)));
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Xoshiro256 rng(11);
  auto net = make_network(3, {{6, Activation::maxout2}, {2, Activation::identity}}, rng);
  const Matrix x = random_matrix(5, 3, rng);
  auto fr = forward(net, x);
  auto g = backward(net, fr.tape, Matrix::Zero(5, 2));
  EXPECT_EQ(g.squared_norm(), 0.0);
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(Backward, ScalarAffine) {
  Matrix w(1, 1);
  w << 3.0;
  Vector b(1);
  b << -1.0;
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::identity, w, b));
  Matrix x(1, 1);
  x << 2.0;
  auto fr = forward(net, x);
  auto g = backward(net, fr.tape, Matrix::Ones(1, 1));
  EXPECT_DOUBLE_EQ(g.weight[0](0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.bias[0](0), 1.0);
  EXPECT_DOUBLE_EQ(g.input(0, 0), 3.0);
}

TEST(Backward, StaleTapeIsRejected) {
  Xoshiro256 rng(5);
  auto net = make_network(2, {{4, Activation::maxout2}, {2, Activation::abs}}, rng);
  auto fr = forward(net, random_matrix(3, 2, rng));
  net.layers[0].weight(0, 0) += 0.1;
  EXPECT_THROW(backward(net, fr.tape, Matrix::Ones(3, 2)), StateError);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomThreeLayerNet) {
  Xoshiro256 rng(2024);
  auto net = make_network(4, {{16, Activation::maxout2}, {16, Activation::maxout2}, {4, Activation::identity}}, rng);
  const Matrix x = random_matrix(7, 4, rng);
  const Matrix seed = random_matrix(7, 4, rng);
  auto res = gradient_check(net, [&](const FeatureNetwork& n, GradientBundle* g) { return seeded_loss(n, x, seed, g); });
  EXPECT_LT(res.max_relative_error, 1e-5);
  EXPECT_TRUE(res.kinks.empty());

  // Input gradient through the same chain.
  auto fr = forward(net, x);
  const auto g = backward(net, fr.tape, seed);
  std::vector<double> theta(x.data(), x.data() + x.size());
  auto in_res = check_gradient(theta, std::span<const double>(g.input.data(), g.input.size()),
                               [&](std::span<const double> t) {
                                 Matrix xp = Eigen::Map<const Matrix>(t.data(), x.rows(), x.cols());
                                 return predict(net, xp).cwiseProduct(seed).sum();
                               });
  EXPECT_LT(in_res.max_relative_error, 1e-5);
}

// Property: every activation tag passes a finite-difference check on random instances.
TEST(Backward, EveryActivationMatchesFiniteDifferences) {
  const std::vector<std::vector<LayerSpec>> archs = {
      {{5, Activation::leaky_relu, 0.2}, {3, Activation::abs}},
      {{5, Activation::maxout2}, {3, Activation::identity}},
      {{5, Activation::leaky_relu, 0.3}, {5, Activation::maxout2}, {2, Activation::leaky_relu, 0.1}},
      {{3, Activation::abs}},
  };
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& arch : archs) {
      Xoshiro256 rng(seed);
      auto net = make_network(3, arch, rng);
      const Matrix x = random_matrix(6, 3, rng);
      const Matrix up = random_matrix(6, net.output_dim(), rng);
      auto res = gradient_check(net, [&](const FeatureNetwork& n, GradientBundle* g) { return seeded_loss(n, x, up, g); });
      EXPECT_LT(res.max_relative_error, 1e-4) << "seed " << seed;
    }
  }
}

TEST(GradientCheck, QuadraticLossOnLinearNet) {
  Xoshiro256 rng(9);
  auto net = make_network(3, {{2, Activation::identity}}, rng);
  const Matrix x = random_matrix(8, 3, rng);
  const Matrix target = random_matrix(8, 2, rng);
  auto res = gradient_check(net, [&](const FeatureNetwork& n, GradientBundle* g) {
    auto fr = forward(n, x);
    const Matrix r = fr.output - target;
    if (g) *g = backward(n, fr.tape, r);
    return 0.5 * r.squaredNorm();
  });
  EXPECT_LT(res.max_relative_error, 1e-7);
}

TEST(GradientCheck, ReportsKinkInsteadOfFailing) {
  // f = |w x + b| at x = 1, w = 0, b = 0: the bias and weight sit exactly on the kink.
  FeatureNetwork net;
  net.layers.push_back(make_layer(Activation::abs, Matrix::Zero(1, 1), Vector::Zero(1)));
  Matrix x(1, 1);
  x << 1.0;
  auto res = gradient_check(net, [&](const FeatureNetwork& n, GradientBundle* g) {
    return seeded_loss(n, x, Matrix::Ones(1, 1), g);
  });
  EXPECT_EQ(res.kinks.size(), 2u);
  EXPECT_EQ(res.checked, 0u);
}

TEST(Checkpoint, RoundTripIsTextExact) {
  Xoshiro256 rng(42);
  auto net = make_network(4, {{16, Activation::maxout2}, {16, Activation::maxout2}, {4, Activation::abs}}, rng);
  const std::string text = network_to_json(net).dump();
  const FeatureNetwork back = network_from_json(json::parse(text));
  EXPECT_EQ(network_to_json(back).dump(), text);
  EXPECT_EQ(back.fingerprint(), net.fingerprint());
}

TEST(Checkpoint, RejectsInconsistentDocument) {
  Xoshiro256 rng(1);
  auto net = make_network(2, {{2, Activation::identity}}, rng);
  json j = network_to_json(net);
  j["layers"][0]["weight"]["rows"] = 3;
  EXPECT_THROW(network_from_json(j), ShapeError);
}
