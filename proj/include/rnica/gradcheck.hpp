#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rnica/network.hpp"

namespace rnica {

struct GradientCheckResult {
  double max_relative_error = 0.0;   // over non-kink coordinates
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::vector<std::size_t> kinks;    // coordinates where one-sided slopes disagree
};

/// Compares `analytic` against central differences of `f` around `theta`.
///
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|). A
/// coordinate whose forward and backward one-sided slopes disagree by more
/// than `kink_tol` (relative) sits on a kink; it is reported in `kinks` and
/// left out of the maximum instead of being counted as a failure.
template <class Fn>
GradientCheckResult check_gradient(std::vector<double> theta, std::span<const double> analytic, Fn&& f,
                                   double h = 1e-6, double kink_tol = 1e-2) {
  GradientCheckResult res;
  const double f0 = f(std::span<const double>(theta));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double fp = f(std::span<const double>(theta));
    theta[i] = saved - h;
    const double fm = f(std::span<const double>(theta));
    theta[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double scale = std::max(1.0, std::abs(numeric));
    const double forward_slope = (fp - f0) / h;
    const double backward_slope = (f0 - fm) / h;
    if (std::abs(forward_slope - backward_slope) > kink_tol * scale) {
      res.kinks.push_back(i);
      continue;
    }
    ++res.checked;
    const double err = std::abs(analytic[i] - numeric) / scale;
    if (err > res.max_relative_error) {
      res.max_relative_error = err;
      res.worst_index = i;
    }
  }
  return res;
}

/// Scalar loss of a network; fills `grad` with analytic parameter gradients when non-null.
using NetworkLoss = std::function<double(const FeatureNetwork&, GradientBundle* grad)>;

inline std::vector<double> flatten_parameters(const FeatureNetwork& net) {
  std::vector<double> out;
  out.reserve(net.parameter_count());
  for (const auto& l : net.layers) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

inline void assign_parameters(FeatureNetwork& net, std::span<const double> flat) {
  if (flat.size() != net.parameter_count()) throw ShapeError("assign_parameters: size mismatch");
  std::size_t k = 0;
  for (auto& l : net.layers) {
    std::copy_n(flat.begin() + k, l.weight.size(), l.weight.data());
    k += static_cast<std::size_t>(l.weight.size());
    std::copy_n(flat.begin() + k, l.bias.size(), l.bias.data());
    k += static_cast<std::size_t>(l.bias.size());
  }
}

inline std::vector<double> flatten_gradients(const GradientBundle& g) {
  std::vector<double> out;
  for (const auto& b : gradient_blocks(g)) out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// Finite-difference check of a network loss over all network parameters.
inline GradientCheckResult gradient_check(const FeatureNetwork& net, const NetworkLoss& loss,
                                          double h = 1e-6) {
  GradientBundle g;
  loss(net, &g);
  const std::vector<double> analytic = flatten_gradients(g);
  FeatureNetwork probe = net;
  return check_gradient(flatten_parameters(net), analytic,
                        [&](std::span<const double> theta) {
                          assign_parameters(probe, theta);
                          return loss(probe, nullptr);
                        },
                        h);
}

}  // namespace rnica
