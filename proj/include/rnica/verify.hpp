#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "rnica/gradcheck.hpp"
#include "rnica/losses.hpp"
#include "rnica/oracle.hpp"
#include "rnica/train.hpp"

// Theory checks shared by the `verify` subcommand and the acceptance binary.
namespace rnica::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

inline Matrix normal_matrix(Eigen::Index r, Eigen::Index c, Xoshiro256& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.normal();
  return m;
}

template <class Model, class Fn>
GradientCheckResult check_model(Model model, Fn objective) {
  const auto theta = flatten_blocks(model.blocks());
  const auto analytic = objective(model).grad;
  return check_gradient(theta, analytic, [&](std::span<const double> t) {
    Model m = model;
    assign_blocks(m.blocks(), t);
    return objective(m).total();
  });
}

}  // namespace detail

/// Uniform scores give log 2 / (g + 1); uniform logits give log K / (g + 1).
inline Check closed_form_losses() {
  double worst = 0.0;
  const std::vector<double> zeros(8, 0.0);
  for (double g : {0.1, 0.5, 1.0, 5.0}) {
    worst = std::max(worst, std::abs(gamma_binary_loss(zeros, zeros, g).loss - std::log(2.0) / (g + 1.0)));
    for (int K : {2, 4, 10}) {
      const Matrix z = Matrix::Constant(9, K, -0.8);
      std::vector<int> labels(9);
      for (int t = 0; t < 9; ++t) labels[static_cast<std::size_t>(t)] = t % K;
      worst = std::max(worst, std::abs(gamma_multiclass_loss(z, labels, g).loss - std::log(K) / (g + 1.0)));
    }
  }
  return {"closed-form losses", worst <= 1e-9, "max |err| " + detail::fmt(worst)};
}

/// gamma = 1e-6 against the exact cross entropies on 100 random batches.
inline Check gamma_limit(std::uint64_t seed = 1) {
  auto rng = make_stream(seed, "verify-gamma-limit");
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> pos(32), neg(32);
    for (auto& v : pos) v = 2.0 * rng.normal();
    for (auto& v : neg) v = 2.0 * rng.normal();
    worst = std::max(worst, std::abs(gamma_binary_loss(pos, neg, 1e-6).loss - baseline_binary_ce(pos, neg).loss));
    const int K = 2 + static_cast<int>(rng.below(9));
    const Matrix z = detail::normal_matrix(24, K, rng, 2.0);
    std::vector<int> labels(24);
    for (auto& u : labels) u = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
    worst = std::max(worst,
                     std::abs(gamma_multiclass_loss(z, labels, 1e-6).loss - baseline_multiclass_ce(z, labels).loss));
  }
  return {"gamma -> 0 consistency", worst <= 1e-5, "max |err| " + detail::fmt(worst)};
}

/// Every pairing of loss (cross entropy, gamma cross entropy), head (segment,
/// pair) and network output (abs, linear) on 20 seeded instances each.
inline Check gradient_suite(int instances = 20) {
  double worst = 0.0;
  std::size_t checked = 0, kinks = 0;
  int block = 0;
  for (bool abs_net : {true, false})
    for (double g : {0.0, 0.5, 1.0, 5.0}) {
      ++block;
      for (int i = 0; i < instances; ++i) {
        const std::uint64_t seed = static_cast<std::uint64_t>(1000 * block + i);
        auto rng = make_stream(seed, "verify-grad");
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.hidden_multiplier = 2;
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(2));
        const Method net_kind = abs_net ? Method::tcl : Method::pcl;

        auto tm = init_tcl_model(d, 4, cfg);
        tm.net = make_feature_network(d, net_kind, rng, 2);
        const Matrix x = detail::normal_matrix(10, d, rng);
        std::vector<int> labels(10);
        for (auto& u : labels) u = static_cast<int>(rng.below(4));
        auto r1 = detail::check_model(tm, [&](const TclModel& m) { return tcl_objective(m, x, labels, g, 1e-2); });

        auto pm = init_pcl_model(d, cfg);
        pm.net = make_feature_network(d, net_kind, rng, 2);
        for (Eigen::Index k = 0; k < d; ++k) {
          pm.head.b[k] = 0.3 * rng.normal();
          pm.head.bbar[k] = 0.3 * rng.normal();
        }
        const Matrix xc = detail::normal_matrix(6, d, rng), xp = detail::normal_matrix(6, d, rng),
                     xn = detail::normal_matrix(6, d, rng);
        auto r2 = detail::check_model(pm, [&](const PclModel& m) { return pcl_objective(m, xc, xp, xn, g, 1e-2); });

        for (const auto* r : {&r1, &r2}) {
          worst = std::max(worst, r->max_relative_error);
          checked += r->checked;
          kinks += r->kinks.size();
        }
      }
    }
  std::ostringstream os;
  // {cross entropy, gamma cross entropy} x {segment, pair head} x {abs, linear output}
  os << "8 combinations (gamma 0, 0.5, 1, 5), " << checked << " coordinates, " << kinks << " kink coordinates skipped, max rel err "
     << detail::fmt(worst);
  return {"gradient suite", worst < 1e-4 && checked > 0, os.str()};
}

/// Brute-force minimisers against the closed-form ratio on separated supports.
inline Check minimizer_oracle() {
  double worst_bin = 0.0, worst_mc = 0.0;
  int n = 0;
  for (double eps : {0.1, 0.3, 0.5})
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto d = oracle::separated_instance(4 + 4 * static_cast<Eigen::Index>(seed), 4, eps, seed);
      for (double g : {0.5, 1.0, 2.0}) worst_bin = std::max(worst_bin, oracle::brute_force_minimizer(d, g).max_rel_dev);
      const auto m = oracle::separated_instance(12, 3, eps, 100 + seed);
      worst_mc = std::max(worst_mc, oracle::brute_force_minimizer_multiclass(m, 1.0).max_abs_dev);
      ++n;
    }
  return {"gamma minimizer", worst_bin < 1e-3 && worst_mc < 1e-3,
          std::to_string(n) + " instances, binary max rel dev " + detail::fmt(worst_bin) + ", multiclass max dev " +
              detail::fmt(worst_mc)};
}

inline Check nu_behavior() {
  double worst_zero = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (double v : oracle::nu_sweep(oracle::separated_instance(8, 4, 0.3, seed), {0.1, 0.5, 1.0, 2.0}))
      worst_zero = std::max(worst_zero, std::abs(v));
  const auto nu = oracle::nu_sweep(oracle::tail_overlap_instance(0.2), {0.1, 0.5, 1.0, 2.0});
  bool decreasing = nu.front() > 0.0;
  for (std::size_t i = 1; i < nu.size(); ++i) decreasing = decreasing && nu[i] < nu[i - 1];
  std::ostringstream os;
  os << "separated max |nu| " << worst_zero << "; tail-overlap nu";
  for (double v : nu) os << ' ' << detail::fmt(v);
  return {"nu behavior", worst_zero == 0.0 && decreasing, os.str()};
}

inline Check influence_behavior() {
  const std::vector<double> mags = {2.0, 5.0, 10.0, 20.0, 50.0, 100.0};
  const auto robust = oracle::influence_sweep(oracle::gaussian_probe(0.5, 15, 3.0, 1.0), mags);
  const auto logistic = oracle::influence_sweep(oracle::gaussian_probe(0.5, 15, 3.0, 0.0), mags);
  std::ostringstream os;
  os.precision(4);
  os << "gamma=1 |IF|";
  for (double v : robust.abs_if) os << ' ' << v;
  os << "; gamma=0 |IF|";
  for (double v : logistic.abs_if) os << ' ' << v;
  return {"influence function", robust.bounded_tail && logistic.increasing_tail, os.str()};
}

inline std::vector<Check> theory_suite() {
  return {closed_form_losses(), gamma_limit(), gradient_suite(), minimizer_oracle(), nu_behavior(),
          influence_behavior()};
}

}  // namespace rnica::verify
