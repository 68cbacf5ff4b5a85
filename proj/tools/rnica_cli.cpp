#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rnica/experiment.hpp"
#include "rnica/verify.hpp"

using namespace rnica;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2 };

struct Flags {
  std::string config;
  int seeds = 0;
  std::string out = "runs";
  int parallel = 1;
  bool verbose = false;
};

ExperimentConfig load(const Flags& f) {
  auto c = load_experiment_config(f.config);
  if (f.seeds < 0) throw ConfigError("--seeds", "must be >= 1");
  if (f.seeds > 0) {
    c.seeds.clear();
    for (int s = 1; s <= f.seeds; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (f.parallel < 1) throw ConfigError("--parallel", "must be >= 1");
  return c;
}

int report_failures(const RunSummary& s) {
  for (const auto& [seed, what] : s.failed) std::fprintf(stderr, "seed %llu failed: %s\n",
                                                         static_cast<unsigned long long>(seed), what.c_str());
  std::printf("%s\n", s.dir.string().c_str());
  return s.failed.empty() ? kOk : kRuntime;
}

int run_verify(const ExperimentConfig& c, const RunOptions& o) {
  const auto checks = verify::theory_suite();
  bool all = true;
  json doc = {{"config_hash", config_hash(c)}, {"version", kVersion}, {"checks", json::array()}};
  for (const auto& k : checks) {
    all = all && k.passed;
    std::printf("%-24s %s  %s\n", k.name.c_str(), k.passed ? "PASS" : "FAIL", k.detail.c_str());
    doc["checks"].push_back({{"name", k.name}, {"passed", k.passed}, {"detail", k.detail}});
  }
  const auto dir = std::filesystem::path(o.out) / config_hash(c);
  std::filesystem::create_directories(dir);
  save_json((dir / "verify.json").string(), doc);
  return all ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust nonlinear ICA toolkit"};
  app.set_version_flag("--version", kVersion);
  Flags f;
  app.add_option("--config", f.config, "experiment config (JSON)")->required();
  app.add_option("--seeds", f.seeds, "use seeds 1..N instead of the config's list");
  app.add_option("--out", f.out, "output root");
  app.add_option("--parallel", f.parallel, "seeds run concurrently");
  app.add_flag("--verbose", f.verbose, "progress on stderr");
  app.require_subcommand(1, 1);
  app.fallthrough();
  auto* gen = app.add_subcommand("gen", "generate datasets only");
  auto* train = app.add_subcommand("train", "generate, train, evaluate and aggregate");
  auto* eval = app.add_subcommand("eval", "re-evaluate saved checkpoints and aggregate");
  auto* ver = app.add_subcommand("verify", "run the theory checks");
  auto* causal = app.add_subcommand("causal", "causal-direction runs on synthetic SEM data");
  auto* report = app.add_subcommand("report", "re-aggregate existing per-seed reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const auto c = load(f);
    const RunOptions o{f.out, f.parallel, f.verbose};
    if (gen->parsed()) return report_failures(generate_datasets(c, o));
    if (train->parsed()) {
      if (c.causal) throw ConfigError("causal", "use the causal subcommand for this config");
      return report_failures(run_experiment(c, o));
    }
    if (eval->parsed()) return report_failures(evaluate_checkpoints(c, o));
    if (ver->parsed()) return run_verify(c, o);
    if (causal->parsed()) return report_failures(run_causal(c, o));
    if (report->parsed()) {
      const auto dir = std::filesystem::path(o.out) / config_hash(c);
      if (c.causal)
        emit_causal_summary(dir);
      else
        emit_report(dir);
      std::printf("%s\n", dir.string().c_str());
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kRuntime;
}
