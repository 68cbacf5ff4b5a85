// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "rnica/causal.hpp"
#include "rnica/experiment.hpp"
#include "rnica/fastica.hpp"
#include "rnica/verify.hpp"

using namespace rnica;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string f3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

ExperimentConfig config(const std::string& name) {
  return load_experiment_config(std::string(RNICA_SOURCE_DIR) + "/configs/" + name);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rnica_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

// Mean over seeds of mean matched |corr| and mean R^2 per method.
struct MethodMeans {
  std::map<std::string, double> corr, r2;
};

MethodMeans method_means(const RunSummary& s, const ExperimentConfig& c) {
  if (!s.failed.empty()) throw Error("seed " + std::to_string(s.failed.begin()->first) + " failed: " + s.failed.begin()->second);
  MethodMeans m;
  std::map<std::string, int> n;
  for (auto seed : c.seeds)
    for (const auto& row : read_seed_rows(s.dir / std::to_string(seed))) {
      m.corr[row.key.method] += row.mean_abs_corr;
      m.r2[row.key.method] += row.mean_r2;
      ++n[row.key.method];
    }
  for (auto& [k, v] : m.corr) v /= n[k];
  for (auto& [k, v] : m.r2) v /= n[k];
  return m;
}

Outcome from_check(const verify::Check& c) { return {c.passed, c.detail}; }

Outcome table1_trend(const fs::path& dir) {
  const auto c = config("table1_desk.json");
  const auto m = method_means(run_experiment(c, {dir.string(), 1, false}), c);
  const double tcl = m.corr.at("tcl"), rtcl = m.corr.at("rtcl");
  return {rtcl - tcl >= 0.05 && rtcl >= 0.75,
          "TCL " + f3(tcl) + ", RTCL(g=1) " + f3(rtcl) + ", gap " + f3(rtcl - tcl) + " (need >= 0.05, RTCL >= 0.75)"};
}

Outcome table2_trend(const fs::path& dir) {
  const auto c = config("table2_desk.json");
  const auto m = method_means(run_experiment(c, {dir.string(), 1, false}), c);
  const double pcl = m.corr.at("pcl"), rpcl = m.corr.at("rpcl");
  return {rpcl >= pcl && rpcl - pcl >= 0.01,
          "PCL " + f3(pcl) + ", RPCL(g=1) " + f3(rpcl) + ", diff " + f3(rpcl - pcl) + " (need >= 0.01)"};
}

Outcome clean_sanity() {
  const auto c = config("clean_desk.json");
  const auto m = method_means(run_experiment(c, {scratch("c9").string(), 1, false}), c);
  const double tc = m.corr.at("tcl"), tr2 = m.r2.at("tcl"), rc = m.corr.at("rtcl");
  return {tr2 >= 0.9 && tc >= 0.9 && std::abs(rc - tc) <= 0.05,
          "TCL |corr| " + f3(tc) + " R^2 " + f3(tr2) + ", RTCL(g=1) |corr| " + f3(rc) + " (|diff| " +
              f3(std::abs(rc - tc)) + ")"};
}

Outcome fastica_recovery() {
  int ok = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto rng = make_stream(seed, "acceptance-fastica");
    Matrix s(20000, 2);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = rng.laplace(1.0);
    const double th = rng.uniform(0.0, 2.0 * 3.141592653589793);
    Matrix a(2, 2);
    a << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    const Matrix x = s * a.transpose();
    const auto ica = fastica(x, FastIcaOptions{500, 1e-6, seed});
    const double m = matched_mean_abs_corr(ica.components, s).mean;
    worst = std::min(worst, m);
    ok += m >= 0.99;
  }
  return {ok == 10, std::to_string(ok) + "/10 seeds >= 0.99, worst " + f3(worst)};
}

Outcome hsic_calibration() {
  int reject = 0;
  for (int t = 0; t < 200; ++t) {
    auto rng = make_stream(static_cast<std::uint64_t>(t + 1), "acceptance-hsic-null");
    Vector a(200), b(200);
    for (int i = 0; i < 200; ++i) a[i] = rng.uniform();
    for (int i = 0; i < 200; ++i) b[i] = rng.uniform();
    reject += hsic_test(a, b, 500, static_cast<std::uint64_t>(t + 1)).p_value < 0.05;
  }
  int detect = 0;
  const int power_trials = 100;
  for (int t = 0; t < power_trials; ++t) {
    auto rng = make_stream(static_cast<std::uint64_t>(t + 1), "acceptance-hsic-power");
    Vector a(500), b(500);
    for (int i = 0; i < 500; ++i) a[i] = rng.normal();
    for (int i = 0; i < 500; ++i) b[i] = a[i] * a[i] + 0.1 * rng.normal();
    detect += hsic_test(a, b, 200, static_cast<std::uint64_t>(t + 1)).p_value < 0.05;
  }
  const double type1 = reject / 200.0, power = detect / static_cast<double>(power_trials);
  return {type1 >= 0.02 && type1 <= 0.08 && power >= 0.95,
          "type-I " + f3(type1) + " over 200 null trials, power " + f3(power) + " over " +
              std::to_string(power_trials) + " quadratic trials"};
}

Outcome causal_direction() {
  const auto c = config("causal_sem.json");
  const auto s = run_causal(c, {scratch("c12").string(), 1, false});
  if (!s.failed.empty()) throw Error("causal seed failed: " + s.failed.begin()->second);
  int correct = 0, reversed = 0, inconclusive = 0;
  for (auto seed : c.seeds) {
    const json doc = load_json((s.dir / std::to_string(seed) / "report.json").string());
    const auto v = doc.at("causal").at("verdict").get<std::string>();
    if (v == "inconclusive")
      ++inconclusive;
    else if (v == doc.at("causal").at("truth").get<std::string>())
      ++correct;
    else
      ++reversed;
  }
  return {correct >= 8 && reversed == 0, std::to_string(correct) + "/10 correct, " + std::to_string(reversed) +
                                             " reversed, " + std::to_string(inconclusive) + " inconclusive"};
}

// Byte comparison of every per-seed file of two runs of the same config.
bool same_seed_files(const fs::path& a, const fs::path& b, const ExperimentConfig& c, std::string& why) {
  const auto hash = config_hash(c);
  for (auto seed : c.seeds)
    for (const char* f : {"report.json", "eval.csv", "loss_trace.csv"}) {
      const auto pa = a / hash / std::to_string(seed) / f, pb = b / hash / std::to_string(seed) / f;
      if (!fs::exists(pa) || read_text(pa.string()) != read_text(pb.string())) {
        why = pa.string();
        return false;
      }
    }
  return true;
}

Outcome determinism(const fs::path& first7, const fs::path& first8) {
  const auto c7 = config("table1_desk.json"), c8 = config("table2_desk.json");
  if (!fs::exists(first7 / config_hash(c7))) run_experiment(c7, {first7.string(), 1, false});
  if (!fs::exists(first8 / config_hash(c8))) run_experiment(c8, {first8.string(), 1, false});
  const auto r7 = scratch("c13_7"), r8 = scratch("c13_8");
  run_experiment(c7, {r7.string(), 1, false});
  run_experiment(c8, {r8.string(), 1, false});
  std::string why;
  const bool ok7 = same_seed_files(first7, r7, c7, why);
  const bool ok8 = ok7 && same_seed_files(first8, r8, c8, why);
  return {ok7 && ok8, ok7 && ok8 ? "criteria 7 and 8 reruns byte-identical (report.json, eval.csv, loss_trace.csv)"
                                 : "differs: " + why};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> want;
  for (int i = 1; i < argc; ++i) want.insert(std::atoi(argv[i]));
  const auto selected = [&](int k) { return want.empty() || want.count(k); };

  const auto dir7 = scratch("c7"), dir8 = scratch("c8");
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"closed-form losses", [] { return from_check(verify::closed_form_losses()); }}},
      {2, {"gamma -> 0 consistency", [] { return from_check(verify::gamma_limit()); }}},
      {3, {"gradient suite", [] { return from_check(verify::gradient_suite()); }}},
      {4, {"gamma minimizer oracle", [] { return from_check(verify::minimizer_oracle()); }}},
      {5, {"nu behavior", [] { return from_check(verify::nu_behavior()); }}},
      {6, {"influence function", [] { return from_check(verify::influence_behavior()); }}},
      {7, {"TCL vs RTCL trend", [&] { return table1_trend(dir7); }}},
      {8, {"PCL vs RPCL trend", [&] { return table2_trend(dir8); }}},
      {9, {"clean-data sanity", [] { return clean_sanity(); }}},
      {10, {"FastICA recovery", [] { return fastica_recovery(); }}},
      {11, {"HSIC calibration", [] { return hsic_calibration(); }}},
      {12, {"causal direction", [] { return causal_direction(); }}},
      {13, {"determinism", [&] { return determinism(dir7, dir8); }}},
  };

  int failed = 0;
  for (const auto& [k, item] : criteria) {
    if (!selected(k)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = item.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-24s %s  %s  [%.0fs]\n", k, item.first.c_str(), o.passed ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.passed;
  }
  std::printf("%d failed\n", failed);
  return failed == 0 ? 0 : 1;
}
