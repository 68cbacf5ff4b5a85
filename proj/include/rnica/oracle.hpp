#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "rnica/error.hpp"
#include "rnica/losses.hpp"
#include "rnica/matrix.hpp"
#include "rnica/random.hpp"

namespace rnica::oracle {

// Discrete population checks of the gamma-cross-entropy theory. Tables are
// indexed (x, u): rows are x grid cells, columns are u grid cells.

struct DiscreteJointDensity {
  Matrix target;    // p*(x|u), each column sums to 1
  Matrix outlier;   // delta(x|u), each column sums to 1 (ignored where eps(u) = 0)
  Vector eps;       // eps(u) in [0, 1)
  Vector p_u;       // p(u), sums to 1

  Eigen::Index nx() const { return target.rows(); }
  Eigen::Index nu() const { return target.cols(); }

  void validate() const {
    if (outlier.rows() != nx() || outlier.cols() != nu() || eps.size() != nu() || p_u.size() != nu())
      throw ShapeError("DiscreteJointDensity: table shapes disagree");
    auto is_distribution = [](const auto& v) {
      return (v.array() >= 0.0).all() && std::abs(v.sum() - 1.0) < 1e-9;
    };
    if (!is_distribution(p_u)) throw InputError("DiscreteJointDensity: p(u) is not a distribution");
    for (Eigen::Index u = 0; u < nu(); ++u) {
      if (!(eps[u] >= 0.0 && eps[u] < 1.0)) throw InputError("DiscreteJointDensity: eps(u) outside [0, 1)");
      if (!is_distribution(target.col(u))) throw InputError("DiscreteJointDensity: p*(.|u) is not a distribution");
      if (eps[u] > 0.0 && !is_distribution(outlier.col(u)))
        throw InputError("DiscreteJointDensity: delta(.|u) is not a distribution");
    }
  }

  /// (1 - eps(u)) p*(x|u) p(u)
  Matrix clean_joint() const {
    Matrix m(nx(), nu());
    for (Eigen::Index u = 0; u < nu(); ++u) m.col(u) = (1.0 - eps[u]) * p_u[u] * target.col(u);
    return m;
  }
  /// eps(u) delta(x|u) p(u)
  Matrix outlier_joint() const {
    Matrix m(nx(), nu());
    for (Eigen::Index u = 0; u < nu(); ++u) m.col(u) = eps[u] * p_u[u] * outlier.col(u);
    return m;
  }
  Matrix joint() const { return clean_joint() + outlier_joint(); }
  Vector p_x() const { return joint().rowwise().sum(); }
};

/// r*(x, u) = (1 - eps(u)) p*(x|u) / p(x); NaN where p(x) = 0.
inline Matrix closed_form_ratio(const DiscreteJointDensity& d) {
  const Vector px = d.p_x();
  Matrix r(d.nx(), d.nu());
  for (Eigen::Index x = 0; x < d.nx(); ++x)
    for (Eigen::Index u = 0; u < d.nu(); ++u)
      r(x, u) = px[x] > 0.0 ? (1.0 - d.eps[u]) * d.target(x, u) / px[x] : std::nan("");
  return r;
}

/// Maximise a unimodal f on [lo, hi].
inline double golden_section_max(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), e = a + inv_phi * (b - a);
  double fc = f(c), fe = f(e);
  while (b - a > tol) {
    if (fc >= fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + inv_phi * (b - a);
      fe = f(e);
    }
  }
  return 0.5 * (a + b);
}

// Integrand pieces of J, as functions of log r.
//   negative class: (1 + r^{g+1})^{-g/(g+1)}
//   positive class: (r^{g+1} / (1 + r^{g+1}))^{g/(g+1)}
inline double neg_term(double log_r, double g) { return std::exp(g / (g + 1.0) * log_sigmoid(-(g + 1.0) * log_r)); }
inline double pos_term(double log_r, double g) { return std::exp(g / (g + 1.0) * log_sigmoid((g + 1.0) * log_r)); }

/// J[r; (1-eps) p*, p(x) p(u)] on the grid.
inline double functional_j(const DiscreteJointDensity& d, const Matrix& r, double gamma) {
  const Matrix clean = d.clean_joint();
  const Vector px = d.p_x();
  double s = 0.0;
  for (Eigen::Index x = 0; x < d.nx(); ++x)
    for (Eigen::Index u = 0; u < d.nu(); ++u) {
      const double lr = std::log(r(x, u));
      s += 0.5 * neg_term(lr, gamma) * px[x] * d.p_u[u] + 0.5 * pos_term(lr, gamma) * clean(x, u);
    }
  return -std::log(s) / gamma;
}

struct MinimizerReport {
  Matrix r_hat;                 // NaN on skipped cells
  Matrix r_star;
  double max_rel_dev = 0.0;     // over cells with r* > 0
  double max_abs_dev_zero = 0.0;  // over cells with r* = 0
  std::vector<std::pair<Eigen::Index, Eigen::Index>> skipped;
};

/// J separates over cells once the -log/gamma is stripped, so each r(x, u) is
/// found by its own 1-D search on log r in [-50, 50].
inline MinimizerReport brute_force_minimizer(const DiscreteJointDensity& d, double gamma, double tol = 1e-10) {
  if (!(gamma > 0.0)) throw ParameterError("brute_force_minimizer: gamma must be > 0");
  d.validate();
  const Matrix clean = d.clean_joint();
  const Vector px = d.p_x();
  MinimizerReport rep;
  rep.r_star = closed_form_ratio(d);
  rep.r_hat = Matrix::Constant(d.nx(), d.nu(), std::nan(""));
  for (Eigen::Index x = 0; x < d.nx(); ++x)
    for (Eigen::Index u = 0; u < d.nu(); ++u) {
      const double q = px[x] * d.p_u[u], p1 = clean(x, u);
      if (q <= 0.0) {
        rep.skipped.emplace_back(x, u);
        continue;
      }
      // Maximise f - q rather than f: far left f rounds to q exactly and the
      // search would tie its way to the boundary.
      const double lr = golden_section_max(
          [&](double t) {
            const double neg_minus_one = std::expm1(gamma / (gamma + 1.0) * log_sigmoid(-(gamma + 1.0) * t));
            return q * neg_minus_one + p1 * pos_term(t, gamma);
          },
          -50.0, 50.0, tol);
      rep.r_hat(x, u) = std::exp(lr);
      const double rs = rep.r_star(x, u);
      if (rs > 0.0)
        rep.max_rel_dev = std::max(rep.max_rel_dev, std::abs(rep.r_hat(x, u) - rs) / rs);
      else
        rep.max_abs_dev_zero = std::max(rep.max_abs_dev_zero, rep.r_hat(x, u));
    }
  return rep;
}

struct MulticlassReport {
  Matrix r_hat;        // nx x K, each row normalised to sum 1; NaN rows skipped
  Matrix target;       // p*(x|u) normalised over u per x
  double max_abs_dev = 0.0;
  int sweeps = 0;
  std::vector<Eigen::Index> skipped;  // x cells with no target mass
};

/// Per-x score of the multiclass objective (inside the log):
///   sum_u r_u^g w_u / (sum_u r_u^{g+1})^{g/(g+1)}
inline double multiclass_cell_score(const Eigen::Ref<const Eigen::RowVectorXd>& log_r,
                                    const Eigen::Ref<const Eigen::RowVectorXd>& w, double g) {
  const Eigen::RowVectorXd a = (g + 1.0) * log_r;
  const double m = a.maxCoeff();
  const double lse = m + std::log((a.array() - m).exp().sum());
  double s = 0.0;
  for (Eigen::Index u = 0; u < w.size(); ++u)
    if (w[u] > 0.0) s += w[u] * std::exp(g * log_r[u] - g / (g + 1.0) * lse);
  return s;
}

/// Maximises the full contaminated objective by cyclic coordinate ascent on
/// log r(u, x) for every x. Scale per x is free, so rows are normalised
/// before comparison with p*(x|u).
inline MulticlassReport brute_force_minimizer_multiclass(const DiscreteJointDensity& d, double gamma,
                                                         double tol = 1e-10, int max_sweeps = 2000) {
  if (!(gamma > 0.0)) throw ParameterError("brute_force_minimizer_multiclass: gamma must be > 0");
  d.validate();
  const Matrix w = d.joint();
  const Eigen::Index K = d.nu();
  MulticlassReport rep;
  rep.r_hat = Matrix::Constant(d.nx(), K, std::nan(""));
  rep.target = Matrix::Constant(d.nx(), K, std::nan(""));
  for (Eigen::Index x = 0; x < d.nx(); ++x) {
    const double tsum = d.target.row(x).sum();
    if (tsum <= 0.0 || w.row(x).sum() <= 0.0) {
      rep.skipped.push_back(x);
      continue;
    }
    rep.target.row(x) = d.target.row(x) / tsum;
    Eigen::RowVectorXd lr = Eigen::RowVectorXd::Zero(K);
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
      double moved = 0.0;
      for (Eigen::Index u = 0; u < K; ++u) {
        const double old = lr[u];
        lr[u] = golden_section_max(
            [&](double t) {
              Eigen::RowVectorXd probe = lr;
              probe[u] = t;
              return multiclass_cell_score(probe, w.row(x), gamma);
            },
            -50.0, 50.0, tol);
        moved = std::max(moved, std::abs(lr[u] - old));
      }
      // Re-centre; the objective is invariant to a common shift of log r.
      lr.array() -= lr.maxCoeff();
      if (moved < 10.0 * tol) break;
    }
    rep.sweeps = std::max(rep.sweeps, sweep + 1);
    Eigen::RowVectorXd r = lr.array().exp();
    // Cells pushed to the search boundary are zero in the limit.
    for (Eigen::Index u = 0; u < K; ++u)
      if (lr[u] < -49.0) r[u] = 0.0;
    rep.r_hat.row(x) = r / r.sum();
    rep.max_abs_dev = std::max(rep.max_abs_dev, (rep.r_hat.row(x) - rep.target.row(x)).cwiseAbs().maxCoeff());
  }
  return rep;
}

/// Exact nu = sum_{x,u} (r^{g+1}/(1+r^{g+1}))^{g/(g+1)} eps(u) delta(x|u) p(u).
inline double exact_nu(const DiscreteJointDensity& d, const Matrix& r, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("exact_nu: gamma must be > 0");
  if (r.rows() != d.nx() || r.cols() != d.nu()) throw ShapeError("exact_nu: ratio table shape");
  const Matrix o = d.outlier_joint();
  double s = 0.0;
  for (Eigen::Index x = 0; x < d.nx(); ++x)
    for (Eigen::Index u = 0; u < d.nu(); ++u) {
      if (o(x, u) == 0.0) continue;
      const double rv = r(x, u);
      if (rv > 0.0) s += pos_term(std::log(rv), gamma) * o(x, u);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Test instances.

// Columns are u; random positive mass on the rows flagged in `support`.
inline Matrix random_conditionals(Eigen::Index nx, Eigen::Index nu, Xoshiro256& rng,
                           const std::function<bool(Eigen::Index, Eigen::Index)>& support) {
  Matrix m = Matrix::Zero(nx, nu);
  for (Eigen::Index u = 0; u < nu; ++u) {
    for (Eigen::Index x = 0; x < nx; ++x)
      if (support(x, u)) m(x, u) = rng.uniform(0.1, 1.0);
    m.col(u) /= m.col(u).sum();
  }
  return m;
}

// Target on x < split, outliers on x >= split, for every u.
inline DiscreteJointDensity separated_instance(Eigen::Index nx, Eigen::Index nu, double eps, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  const Eigen::Index split = nx - nx / 4;
  DiscreteJointDensity d;
  d.target = random_conditionals(nx, nu, rng, [&](Eigen::Index x, Eigen::Index) { return x < split; });
  d.outlier = random_conditionals(nx, nu, rng, [&](Eigen::Index x, Eigen::Index) { return x >= split; });
  d.eps = Vector::Constant(nu, eps);
  d.p_u = Vector::Constant(nu, 1.0 / static_cast<double>(nu));
  return d;
}

// 64-point x grid, 8 u cells: Laplace-shaped targets with u-dependent scale,
// Gaussian outlier bumps sitting in their tails.
inline DiscreteJointDensity tail_overlap_instance(double eps) {
  const Eigen::Index nx = 64, nu = 8;
  DiscreteJointDensity d;
  d.target.resize(nx, nu);
  d.outlier.resize(nx, nu);
  for (Eigen::Index u = 0; u < nu; ++u) {
    const double scale = 0.5 + 0.1 * static_cast<double>(u);
    for (Eigen::Index x = 0; x < nx; ++x) {
      const double xv = -8.0 + 16.0 * static_cast<double>(x) / (nx - 1);
      d.target(x, u) = std::exp(-std::abs(xv) / scale);
      d.outlier(x, u) = std::exp(-0.5 * (std::abs(xv) - 5.0) * (std::abs(xv) - 5.0));
    }
    d.target.col(u) /= d.target.col(u).sum();
    d.outlier.col(u) /= d.outlier.col(u).sum();
  }
  d.eps = Vector::Constant(nu, eps);
  d.p_u = Vector::Constant(nu, 1.0 / nu);
  return d;
}

/// nu at r* (or r* scaled by `perturb`) for each gamma.
inline std::vector<double> nu_sweep(const DiscreteJointDensity& d, const std::vector<double>& gammas,
                                    double perturb = 1.0) {
  d.validate();
  Matrix r = closed_form_ratio(d) * perturb;
  for (Eigen::Index k = 0; k < r.size(); ++k)
    if (std::isnan(r.data()[k])) r.data()[k] = 0.0;
  std::vector<double> out;
  for (double g : gammas) out.push_back(exact_nu(d, r, g));
  return out;
}

// ---------------------------------------------------------------------------
// Influence function of the binary gamma estimator for a one-parameter model
// r_theta(x, u) = exp(theta * phi(x, u)).

struct IfProbeModel {
  std::vector<double> x_grid, u_grid;
  Matrix p_star;           // p*(x, u) on the grid, sums to 1
  std::function<double(double, double)> phi;
  double gamma = 1.0;
  std::vector<double> eps_grid = {1e-3, 5e-4};
};

/// Bivariate normal with correlation rho, discretised on an n-point grid on [-a, a].
inline IfProbeModel gaussian_probe(double rho = 0.5, int n = 15, double a = 3.0, double gamma = 1.0) {
  IfProbeModel m;
  for (int i = 0; i < n; ++i) m.x_grid.push_back(-a + 2.0 * a * i / (n - 1));
  m.u_grid = m.x_grid;
  m.p_star.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = m.x_grid[i], u = m.u_grid[j];
      m.p_star(i, j) = std::exp(-(x * x - 2.0 * rho * x * u + u * u) / (2.0 * (1.0 - rho * rho)));
    }
  m.p_star /= m.p_star.sum();
  m.phi = [](double x, double u) { return x * u; };
  m.gamma = gamma;
  return m;
}

struct WeightedPoints {
  std::vector<double> x, u, w;
  void add(double xv, double uv, double wv) {
    if (wv == 0.0) return;
    x.push_back(xv);
    u.push_back(uv);
    w.push_back(wv);
  }
};

// A_theta and B_theta from the estimating equation (up to the common factor g+1).
inline double if_a(double theta, double phi, double g) {
  const double z = (g + 1.0) * theta * phi;
  return phi * std::exp(log_sigmoid(-z) + g / (g + 1.0) * log_sigmoid(z));
}
inline double if_b(double theta, double phi, double g) {
  const double z = (g + 1.0) * theta * phi;
  return phi * std::exp(log_sigmoid(z) + g / (g + 1.0) * log_sigmoid(-z));
}

/// Positive-class and product-of-marginals measures, optionally contaminated by
/// mass eps at (xb, ub).
inline std::pair<WeightedPoints, WeightedPoints> probe_measures(const IfProbeModel& m, double eps, double xb,
                                                                double ub) {
  const auto nx = static_cast<Eigen::Index>(m.x_grid.size()), nu = static_cast<Eigen::Index>(m.u_grid.size());
  const Vector px = m.p_star.rowwise().sum(), pu = m.p_star.colwise().sum().transpose();
  WeightedPoints pos, neg;
  for (Eigen::Index i = 0; i < nx; ++i)
    for (Eigen::Index j = 0; j < nu; ++j) pos.add(m.x_grid[i], m.u_grid[j], (1.0 - eps) * m.p_star(i, j));
  pos.add(xb, ub, eps);
  // (a px + eps d_xb)(a pu + eps d_ub), a = 1 - eps
  const double a = 1.0 - eps;
  for (Eigen::Index i = 0; i < nx; ++i)
    for (Eigen::Index j = 0; j < nu; ++j) neg.add(m.x_grid[i], m.u_grid[j], a * a * px[i] * pu[j]);
  for (Eigen::Index i = 0; i < nx; ++i) neg.add(m.x_grid[i], ub, a * eps * px[i]);
  for (Eigen::Index j = 0; j < nu; ++j) neg.add(xb, m.u_grid[j], a * eps * pu[j]);
  neg.add(xb, ub, eps * eps);
  return {pos, neg};
}

inline double estimating_function(const IfProbeModel& m, const WeightedPoints& pos, const WeightedPoints& neg,
                                  double theta) {
  double s = 0.0;
  for (std::size_t k = 0; k < pos.w.size(); ++k) s += pos.w[k] * if_a(theta, m.phi(pos.x[k], pos.u[k]), m.gamma);
  for (std::size_t k = 0; k < neg.w.size(); ++k) s -= neg.w[k] * if_b(theta, m.phi(neg.x[k], neg.u[k]), m.gamma);
  return s;
}

/// Root of the estimating equation by TOMS 748 on a bracket grown from [lo, hi].
inline double solve_theta(const IfProbeModel& m, const WeightedPoints& pos, const WeightedPoints& neg,
                          double lo = -0.5, double hi = 2.0) {
  auto f = [&](double t) { return estimating_function(m, pos, neg, t); };
  double flo = f(lo), fhi = f(hi);
  for (int grow = 0; flo * fhi > 0.0 && grow < 30; ++grow) {
    lo -= (hi - lo);
    hi += (hi - lo) / 2.0;
    flo = f(lo);
    fhi = f(hi);
  }
  if (flo * fhi > 0.0)
    throw NumericalError("solve_theta: root not bracketed; f(" + std::to_string(lo) + ")=" + std::to_string(flo) +
                         ", f(" + std::to_string(hi) + ")=" + std::to_string(fhi));
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  boost::uintmax_t iters = 200;
  const auto br = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(52),
                                                    iters);
  return 0.5 * (br.first + br.second);
}

struct InfluenceEstimate {
  double theta_hat = 0.0;
  std::vector<double> finite_difference;  // (theta_hat - theta_eps) / eps per eps grid entry
  double extrapolated = 0.0;              // Richardson over the last two grid entries
};

inline InfluenceEstimate numeric_influence_function(const IfProbeModel& m, double xb, double ub) {
  if (m.eps_grid.size() < 2) throw ParameterError("numeric_influence_function: need two eps values");
  for (double e : m.eps_grid)
    if (!(e > 0.0 && e <= 0.05)) throw ParameterError("numeric_influence_function: eps grid outside (0, 0.05]");
  InfluenceEstimate est;
  const auto clean = probe_measures(m, 0.0, xb, ub);
  est.theta_hat = solve_theta(m, clean.first, clean.second);
  for (double e : m.eps_grid) {
    const auto cont = probe_measures(m, e, xb, ub);
    est.finite_difference.push_back((est.theta_hat - solve_theta(m, cont.first, cont.second)) / e);
  }
  const std::size_t n = m.eps_grid.size();
  const double e1 = m.eps_grid[n - 2], e2 = m.eps_grid[n - 1];
  const double f1 = est.finite_difference[n - 2], f2 = est.finite_difference[n - 1];
  // First-order error in eps: eliminate it.
  est.extrapolated = (e1 * f2 - e2 * f1) / (e1 - e2);
  return est;
}

struct IfSweep {
  std::vector<double> magnitudes;
  std::vector<double> abs_if;
  bool bounded_tail = false;       // max over magnitudes >= 10 <= 1.05 |IF(10)|
  bool increasing_tail = false;    // strictly increasing over magnitudes >= 10
};

/// Outlier at m * (1, 1) for each magnitude m.
inline IfSweep influence_sweep(const IfProbeModel& model, const std::vector<double>& magnitudes) {
  IfSweep s;
  s.magnitudes = magnitudes;
  double at10 = std::nan(""), tail_max = 0.0, prev = -1.0;
  s.increasing_tail = true;
  for (double mag : magnitudes) {
    const double v = std::abs(numeric_influence_function(model, mag, mag).extrapolated);
    s.abs_if.push_back(v);
    if (mag >= 10.0) {
      if (mag == 10.0) at10 = v;
      tail_max = std::max(tail_max, v);
      if (!(v > prev)) s.increasing_tail = false;
      prev = v;
    }
  }
  s.bounded_tail = std::isfinite(at10) && tail_max <= 1.05 * at10;
  return s;
}

}  // namespace rnica::oracle
