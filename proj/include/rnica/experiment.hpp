#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "rnica/causal.hpp"
#include "rnica/checkpoint.hpp"
#include "rnica/datagen.hpp"
#include "rnica/eval.hpp"
#include "rnica/fastica.hpp"
#include "rnica/preprocess.hpp"
#include "rnica/train.hpp"

namespace rnica {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------- config

struct DataSpec {
  std::string kind = "segmented";  // segmented | ar
  int dim = 4;
  int segments = 32;
  int segment_length = 256;
  double scale_lo = 1e-3;
  double scale_hi = 1.0 / std::sqrt(2.0);
  Eigen::Index length = 16384;
  double rho = 0.7;
  int burn_in = 1000;
  int mixing_layers = 3;
};

struct CausalSettings {
  SemSpec sem;
  std::string reverse = "alternate";  // alternate | always | never
  int hsic_samples = 300;
  int permutations = 500;
  double level = 0.05;
};

struct ExperimentConfig {
  std::string name;
  DataSpec data;
  ContaminationSpec contamination;
  std::vector<double> eps_list = {0.0};
  WhiteningOptions whitening;
  std::vector<TrainConfig> methods;
  std::string eval_features = "clean";  // clean | observed
  std::vector<std::uint64_t> seeds = {1};
  std::optional<CausalSettings> causal;
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be rejected by name.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "has the wrong type");
    }
  }

  void read_range(const std::string& key, double& lo, double& hi) {
    if (!j_.contains(key)) return;
    std::vector<double> v;
    read(key, v);
    if (v.size() != 2) throw ConfigError(field(key), "must be [lo, hi]");
    lo = v[0];
    hi = v[1];
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_train_fields(ObjectReader& r, TrainConfig& t) {
  if (r.has("method")) {
    std::string m;
    r.read("method", m);
    t.method = method_from_string(m, r.field("method"));
  }
  r.read("learning_rate", t.learning_rate);
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("l2", t.l2);
  r.read("warm_start_epochs", t.warm_start_epochs);
  r.read("gamma", t.gamma);
  r.read("hidden_multiplier", t.hidden_multiplier);
  r.read("freeze_negatives", t.freeze_negatives);
  r.read("cosine_decay", t.cosine_decay);
}

inline json train_to_json(const TrainConfig& t) {
  return {{"method", to_string(t.method)},
          {"learning_rate", t.learning_rate},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"l2", t.l2},
          {"warm_start_epochs", t.warm_start_epochs},
          {"gamma", t.effective_gamma()},
          {"hidden_multiplier", t.hidden_multiplier},
          {"freeze_negatives", t.freeze_negatives},
          {"cosine_decay", t.cosine_decay}};
}

// Field names in ConfigErrors raised by the generators are bare; prefix them.
template <class Fn>
void with_prefix(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    if (e.field().rfind(prefix, 0) == 0) throw;
    const std::string what = e.what();
    const auto colon = what.find(": ");
    throw ConfigError(prefix + e.field(), colon == std::string::npos ? what : what.substr(colon + 2));
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  detail::ObjectReader top(j, "");
  top.read("name", c.name);

  if (top.has("data")) {
    detail::ObjectReader r(top.raw("data"), "data");
    r.read("kind", c.data.kind);
    r.read("dim", c.data.dim);
    r.read("segments", c.data.segments);
    r.read("segment_length", c.data.segment_length);
    r.read_range("scale_range", c.data.scale_lo, c.data.scale_hi);
    r.read("T", c.data.length);
    r.read("rho", c.data.rho);
    r.read("burn_in", c.data.burn_in);
    r.read("mixing_layers", c.data.mixing_layers);
    r.finish();
  }
  if (c.data.kind != "segmented" && c.data.kind != "ar") throw ConfigError("data.kind", "must be segmented or ar");
  if (c.data.mixing_layers < 1) throw ConfigError("data.mixing_layers", "must be >= 1");
  detail::with_prefix("data.", [&] {
    if (c.data.kind == "segmented")
      SegmentedSourceSpec{c.data.dim, c.data.segments, c.data.segment_length, c.data.scale_lo, c.data.scale_hi, 1}
          .validate();
    else
      ArSourceSpec{c.data.dim, c.data.length, c.data.rho, c.data.burn_in, 1}.validate();
  });

  if (top.has("contamination")) {
    detail::ObjectReader r(top.raw("contamination"), "contamination");
    if (r.has("eps")) {
      const json& e = r.raw("eps");
      try {
        c.eps_list = e.is_array() ? e.get<std::vector<double>>() : std::vector<double>{e.get<double>()};
      } catch (const json::exception&) {
        throw ConfigError("contamination.eps", "must be a number or a list of numbers");
      }
      if (c.eps_list.empty()) throw ConfigError("contamination.eps", "list is empty");
    }
    if (r.has("family")) {
      std::string f;
      r.read("family", f);
      try {
        c.contamination.family = outlier_family_from_string(f);
      } catch (const Error&) {
        throw ConfigError("contamination.family", "unknown outlier family '" + f + "'");
      }
    }
    r.read("scale", c.contamination.scale);
    r.read_range("mean_range", c.contamination.pos_lo, c.contamination.pos_hi);
    r.read("sd", c.contamination.sd);
    r.read("weight", c.contamination.weight);
    r.finish();
  }
  for (double e : c.eps_list) {
    auto con = c.contamination;
    con.eps = e;
    detail::with_prefix("", [&] { con.validate(); });
  }

  if (top.has("preprocess")) {
    detail::ObjectReader r(top.raw("preprocess"), "preprocess");
    if (r.has("method")) {
      std::string m;
      r.read("method", m);
      try {
        c.whitening.method = whitening_method_from_string(m);
      } catch (const Error&) {
        throw ConfigError("preprocess.method", "unknown whitening method '" + m + "'");
      }
    }
    r.read("gamma_w", c.whitening.gamma_w);
    r.read("iterations", c.whitening.iterations);
    r.finish();
  }
  if (!(c.whitening.gamma_w > 0.0)) throw ConfigError("preprocess.gamma_w", "must be > 0");
  if (c.whitening.iterations < 1) throw ConfigError("preprocess.iterations", "must be >= 1");

  TrainConfig base;
  if (top.has("train")) {
    detail::ObjectReader r(top.raw("train"), "train");
    detail::read_train_fields(r, base);
    r.finish();
  }
  if (top.has("methods")) {
    const json& m = top.raw("methods");
    if (!m.is_array() || m.empty()) throw ConfigError("methods", "must be a non-empty list");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const std::string path = "methods[" + std::to_string(i) + "]";
      detail::ObjectReader r(m[i], path);
      if (!r.has("method")) throw ConfigError(path + ".method", "is required");
      TrainConfig t = base;
      detail::read_train_fields(r, t);
      r.finish();
      c.methods.push_back(t);
    }
  } else {
    c.methods.push_back(base);
  }
  for (std::size_t i = 0; i < c.methods.size(); ++i) {
    const auto& t = c.methods[i];
    detail::with_prefix("methods[" + std::to_string(i) + "].", [&] {
      try {
        t.validate();
      } catch (const ConfigError& e) {
        const std::string f = e.field();
        const std::string bare = f.rfind("train.", 0) == 0 ? f.substr(6) : f;
        const std::string what = e.what();
        throw ConfigError(bare, what.substr(what.find(": ") + 2));
      }
    });
    const bool seg = is_segment_method(t.method);
    if (seg != (c.data.kind == "segmented"))
      throw ConfigError("methods[" + std::to_string(i) + "].method",
                        std::string(to_string(t.method)) + " does not fit data.kind " + c.data.kind);
  }

  if (top.has("eval")) {
    detail::ObjectReader r(top.raw("eval"), "eval");
    r.read("features", c.eval_features);
    r.finish();
  }
  if (c.eval_features != "clean" && c.eval_features != "observed")
    throw ConfigError("eval.features", "must be clean or observed");

  if (top.has("seeds")) {
    const json& s = top.raw("seeds");
    try {
      c.seeds = s.get<std::vector<std::uint64_t>>();
    } catch (const json::exception&) {
      throw ConfigError("seeds", "must be a list of non-negative integers");
    }
    if (c.seeds.empty()) throw ConfigError("seeds", "list is empty");
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
      throw ConfigError("seeds", "contains duplicates");
  }

  if (top.has("causal")) {
    CausalSettings cs;
    detail::ObjectReader r(top.raw("causal"), "causal");
    r.read("segments", cs.sem.segments);
    r.read("segment_length", cs.sem.segment_length);
    r.read("coefficient", cs.sem.coefficient);
    r.read_range("scale_range", cs.sem.scale_lo, cs.sem.scale_hi);
    r.read("reverse", cs.reverse);
    r.read("hsic_samples", cs.hsic_samples);
    r.read("permutations", cs.permutations);
    r.read("level", cs.level);
    r.finish();
    if (cs.reverse != "alternate" && cs.reverse != "always" && cs.reverse != "never")
      throw ConfigError("causal.reverse", "must be alternate, always or never");
    detail::with_prefix("causal.", [&] {
      SegmentedSourceSpec{2, cs.sem.segments, cs.sem.segment_length, cs.sem.scale_lo, cs.sem.scale_hi, 1}.validate();
    });
    if (cs.hsic_samples > cs.sem.segments * cs.sem.segment_length)
      throw ConfigError("causal.hsic_samples", "exceeds series length");
    if (c.methods.size() != 1) throw ConfigError("methods", "causal runs take exactly one method");
    CausalConfig probe;
    probe.train = c.methods[0];
    probe.hsic_samples = cs.hsic_samples;
    probe.permutations = cs.permutations;
    probe.level = cs.level;
    probe.validate();
    c.causal = cs;
  }

  top.finish();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw ConfigError("config", e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  return parse_experiment_config(j);
}

/// Normalised document: every field with its effective value. Seeds are left
/// out so that extending the seed list keeps the run directory.
inline json to_json(const ExperimentConfig& c) {
  json data = {{"kind", c.data.kind}, {"dim", c.data.dim}, {"mixing_layers", c.data.mixing_layers}};
  if (c.data.kind == "segmented") {
    data["segments"] = c.data.segments;
    data["segment_length"] = c.data.segment_length;
    data["scale_range"] = {c.data.scale_lo, c.data.scale_hi};
  } else {
    data["T"] = c.data.length;
    data["rho"] = c.data.rho;
    data["burn_in"] = c.data.burn_in;
  }
  const auto& k = c.contamination;
  json methods = json::array();
  for (const auto& t : c.methods) methods.push_back(detail::train_to_json(t));
  json out = {{"name", c.name},
              {"data", data},
              {"contamination",
               {{"eps", c.eps_list},
                {"family", to_string(k.family)},
                {"scale", k.scale},
                {"mean_range", {k.pos_lo, k.pos_hi}},
                {"sd", k.sd},
                {"weight", k.weight}}},
              {"preprocess",
               {{"method", to_string(c.whitening.method)},
                {"gamma_w", c.whitening.gamma_w},
                {"iterations", c.whitening.iterations}}},
              {"methods", methods},
              {"eval", {{"features", c.eval_features}}}};
  if (c.causal) {
    const auto& s = *c.causal;
    out["causal"] = {{"segments", s.sem.segments},
                     {"segment_length", s.sem.segment_length},
                     {"coefficient", s.sem.coefficient},
                     {"scale_range", {s.sem.scale_lo, s.sem.scale_hi}},
                     {"reverse", s.reverse},
                     {"hsic_samples", s.hsic_samples},
                     {"permutations", s.permutations},
                     {"level", s.level}};
  }
  return out;
}

inline std::string config_hash(const ExperimentConfig& c) {
  // FNV-1a over the compact normalised document (keys are sorted by json).
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- runs

struct RunOptions {
  std::string out = "runs";
  int parallel = 1;
  bool verbose = false;
};

struct RunKey {
  std::string method;
  double gamma = 0.0;
  double eps = 0.0;

  std::string series() const { return method + "_g" + format_double(gamma); }
  std::string tag() const { return series() + "_eps" + format_double(eps); }
  bool operator<(const RunKey& o) const {
    return std::tie(method, gamma, eps) < std::tie(o.method, o.gamma, o.eps);
  }
};

struct SeedRow {
  RunKey key;
  double mean_abs_corr = 0.0;
  double mean_r2 = 0.0;
};

namespace detail {

inline std::string csv_prefix(const std::string& hash) { return hash + "," + kVersion; }

inline LabeledSeries generate(const ExperimentConfig& c, double eps, std::uint64_t seed) {
  auto con = c.contamination;
  con.eps = eps;
  con.seed = seed;
  if (c.data.kind == "segmented")
    return generate_segmented_series(
        SegmentedSourceSpec{c.data.dim, c.data.segments, c.data.segment_length, c.data.scale_lo, c.data.scale_hi, seed},
        con, c.data.mixing_layers, seed);
  return generate_ar_series(ArSourceSpec{c.data.dim, c.data.length, c.data.rho, c.data.burn_in, seed}, con,
                            c.data.mixing_layers, seed);
}

inline std::filesystem::path run_dir(const RunOptions& o, const std::string& hash) {
  return std::filesystem::path(o.out) / hash;
}

inline std::filesystem::path seed_dir(const RunOptions& o, const std::string& hash, std::uint64_t seed) {
  return run_dir(o, hash) / std::to_string(seed);
}

// Features the evaluation sees: the whitened clean observations, or the
// whitened observed series.
inline Matrix eval_inputs(const ExperimentConfig& c, const LabeledSeries& ds, const WhiteningTransform& wt) {
  if (c.eval_features == "clean") return apply_whitening(wt, apply_mixing(ds.mixing, ds.sources_clean));
  return apply_whitening(wt, ds.x);
}

inline EvalReport evaluate(const FeatureNetwork& net, Method m, const Matrix& inputs, const Matrix& s_clean,
                           std::uint64_t seed) {
  const Matrix h = predict(net, inputs);
  return is_segment_method(m) ? evaluate_segment_features(h, s_clean, seed) : evaluate_pair_features(h, s_clean);
}

inline void write_trace(std::ostringstream& os, const std::string& prefix, std::uint64_t seed, const RunKey& k,
                        const std::vector<LossTraceRow>& trace) {
  for (const auto& r : trace)
    os << prefix << ',' << seed << ',' << k.method << ',' << format_double(k.gamma) << ',' << format_double(k.eps)
       << ',' << r.epoch << ',' << r.phase << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm)
       << '\n';
}

inline const char* kEvalHeader = "config_hash,version,seed,method,gamma,eps,mean_abs_corr,mean_r2,fastica_converged\n";
inline const char* kTraceHeader = "config_hash,version,seed,method,gamma,eps,epoch,phase,loss,grad_norm\n";

struct TrainedRun {
  RunKey key;
  TrainConfig train;
  WhiteningTransform whitening;
  json model;
  FeatureNetwork net;
  std::vector<LossTraceRow> trace;
};

inline std::vector<TrainedRun> train_seed(const ExperimentConfig& c, std::uint64_t seed,
                                          const std::function<void(const std::string&)>& log) {
  std::vector<TrainedRun> out;
  for (double eps : c.eps_list) {
    auto ds = generate(c, eps, seed);
    const auto wt = fit_whitening(ds.x, c.whitening);
    ds.x = apply_whitening(wt, ds.x);
    for (auto t : c.methods) {
      t.seed = seed;
      TrainedRun run;
      run.key = {to_string(t.method), t.effective_gamma(), eps};
      run.train = t;
      run.whitening = wt;
      log("seed " + std::to_string(seed) + ": training " + run.key.tag());
      if (is_segment_method(t.method)) {
        auto r = train_tcl_rtcl(ds, t);
        run.model = tcl_model_to_json(r.model);
        run.net = std::move(r.model.net);
        run.trace = std::move(r.trace);
      } else {
        auto r = train_pcl_rpcl(ds, t);
        run.model = pcl_model_to_json(r.model);
        run.net = std::move(r.model.net);
        run.trace = std::move(r.trace);
      }
      out.push_back(std::move(run));
    }
  }
  return out;
}

inline json checkpoint_doc(const std::string& hash, std::uint64_t seed, const TrainedRun& r) {
  return {{"config_hash", hash},
          {"version", kVersion},
          {"seed", seed},
          {"method", r.key.method},
          {"gamma", r.key.gamma},
          {"eps", r.key.eps},
          {"train", train_to_json(r.train)},
          {"whitening", whitening_to_json(r.whitening)},
          {"model", r.model}};
}

inline void write_checkpoints(const std::filesystem::path& dir, const std::string& hash, std::uint64_t seed,
                              const std::vector<TrainedRun>& runs) {
  std::filesystem::create_directories(dir / "checkpoints");
  std::ostringstream trace;
  trace << kTraceHeader;
  for (const auto& r : runs) {
    save_json((dir / "checkpoints" / (r.key.tag() + ".json")).string(), checkpoint_doc(hash, seed, r));
    write_trace(trace, csv_prefix(hash), seed, r.key, r.trace);
  }
  write_text((dir / "loss_trace.csv").string(), trace.str());
}

inline void write_evaluation(const std::filesystem::path& dir, const std::string& hash, std::uint64_t seed,
                             const std::vector<std::pair<RunKey, EvalReport>>& evals) {
  std::ostringstream csv;
  csv << kEvalHeader;
  json runs = json::array();
  for (const auto& [k, e] : evals) {
    csv << csv_prefix(hash) << ',' << seed << ',' << k.method << ',' << format_double(k.gamma) << ','
        << format_double(k.eps) << ',' << format_double(e.match.mean) << ',' << format_double(e.r2.mean) << ','
        << (e.fastica_converged ? 1 : 0) << '\n';
    runs.push_back({{"method", k.method}, {"gamma", k.gamma}, {"eps", k.eps}, {"eval", to_json(e)}});
  }
  write_text((dir / "eval.csv").string(), csv.str());
  save_json((dir / "report.json").string(), {{"config_hash", hash},
                                             {"version", kVersion},
                                             {"seed", seed},
                                             {"status", "ok"},
                                             {"runs", runs}});
}

inline void write_failure(const std::filesystem::path& dir, const std::string& hash, std::uint64_t seed,
                          const std::string& what) {
  std::filesystem::create_directories(dir);
  std::filesystem::remove(dir / "eval.csv");
  save_json((dir / "report.json").string(), {{"config_hash", hash},
                                             {"version", kVersion},
                                             {"seed", seed},
                                             {"status", "failed"},
                                             {"error", what}});
}

// Runs fn(seed) for every seed on up to `parallel` threads. Returns the seeds
// that threw, with messages; the others are unaffected.
inline std::map<std::uint64_t, std::string> for_each_seed(const std::vector<std::uint64_t>& seeds, int parallel,
                                                          const std::function<void(std::uint64_t)>& fn) {
  std::map<std::uint64_t, std::string> failed;
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::uint64_t seed;
      {
        std::lock_guard lock(mu);
        if (next >= seeds.size()) return;
        seed = seeds[next++];
      }
      try {
        fn(seed);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        failed[seed] = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(parallel, static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return failed;
}

inline std::function<void(const std::string&)> logger(bool verbose) {
  static std::mutex mu;
  return [verbose](const std::string& msg) {
    if (!verbose) return;
    std::lock_guard lock(mu);
    std::fprintf(stderr, "%s\n", msg.c_str());
  };
}

}  // namespace detail

struct RunSummary {
  std::string hash;
  std::filesystem::path dir;
  std::map<std::uint64_t, std::string> failed;
};

/// Generates the datasets only: <out>/<hash>/<seed>/data_eps<eps>.csv.
inline RunSummary generate_datasets(const ExperimentConfig& c, const RunOptions& o) {
  RunSummary s{config_hash(c), {}, {}};
  s.dir = detail::run_dir(o, s.hash);
  s.failed = detail::for_each_seed(c.seeds, o.parallel, [&](std::uint64_t seed) {
    const auto dir = detail::seed_dir(o, s.hash, seed);
    std::filesystem::create_directories(dir);
    for (double eps : c.eps_list) {
      auto ds = detail::generate(c, eps, seed);
      ds.provenance["config_hash"] = s.hash;
      ds.provenance["version"] = kVersion;
      save_dataset((dir / ("data_eps" + format_double(eps) + ".csv")).string(), ds);
    }
  });
  return s;
}

inline void emit_report(const std::filesystem::path& run_dir);

/// Full pipeline per seed: generate, whiten, train, evaluate, write; then aggregate.
inline RunSummary run_experiment(const ExperimentConfig& c, const RunOptions& o, bool evaluate_runs = true) {
  RunSummary s{config_hash(c), {}, {}};
  s.dir = detail::run_dir(o, s.hash);
  std::filesystem::create_directories(s.dir);
  save_json((s.dir / "config.json").string(),
            {{"config_hash", s.hash}, {"version", kVersion}, {"config", to_json(c)}});
  const auto log = detail::logger(o.verbose);
  s.failed = detail::for_each_seed(c.seeds, o.parallel, [&](std::uint64_t seed) {
    const auto dir = detail::seed_dir(o, s.hash, seed);
    try {
      const auto runs = detail::train_seed(c, seed, log);
      detail::write_checkpoints(dir, s.hash, seed, runs);
      if (!evaluate_runs) return;
      std::vector<std::pair<RunKey, EvalReport>> evals;
      std::map<double, LabeledSeries> data;
      for (const auto& r : runs) {
        auto it = data.find(r.key.eps);
        if (it == data.end()) it = data.emplace(r.key.eps, detail::generate(c, r.key.eps, seed)).first;
        const Matrix inputs = detail::eval_inputs(c, it->second, r.whitening);
        evals.emplace_back(r.key, detail::evaluate(r.net, r.train.method, inputs, it->second.sources_clean, seed));
        log("seed " + std::to_string(seed) + ": " + r.key.tag() + " mean |corr| " +
            format_double(evals.back().second.match.mean));
      }
      detail::write_evaluation(dir, s.hash, seed, evals);
    } catch (const std::exception& e) {
      detail::write_failure(dir, s.hash, seed, e.what());
      throw;
    }
  });
  if (evaluate_runs && s.failed.size() < c.seeds.size()) emit_report(s.dir);
  return s;
}

/// Re-evaluates saved checkpoints (regenerating the data from the seed).
inline RunSummary evaluate_checkpoints(const ExperimentConfig& c, const RunOptions& o) {
  RunSummary s{config_hash(c), {}, {}};
  s.dir = detail::run_dir(o, s.hash);
  s.failed = detail::for_each_seed(c.seeds, o.parallel, [&](std::uint64_t seed) {
    const auto dir = detail::seed_dir(o, s.hash, seed);
    std::vector<std::pair<RunKey, EvalReport>> evals;
    for (double eps : c.eps_list) {
      const auto ds = detail::generate(c, eps, seed);
      for (const auto& t : c.methods) {
        const RunKey key{to_string(t.method), t.effective_gamma(), eps};
        const auto path = dir / "checkpoints" / (key.tag() + ".json");
        if (!std::filesystem::exists(path)) throw InputError("missing checkpoint " + path.string() + "; run train first");
        const json doc = load_json(path.string());
        if (doc.at("config_hash") != s.hash) throw InputError(path.string() + ": config hash mismatch");
        const auto wt = whitening_from_json(doc.at("whitening"));
        const auto net = network_from_json(doc.at("model").at("network"));
        evals.emplace_back(key, detail::evaluate(net, t.method, detail::eval_inputs(c, ds, wt), ds.sources_clean, seed));
      }
    }
    detail::write_evaluation(dir, s.hash, seed, evals);
  });
  if (s.failed.size() < c.seeds.size()) emit_report(s.dir);
  return s;
}

// ---------------------------------------------------------------- aggregation

inline std::vector<SeedRow> read_seed_rows(const std::filesystem::path& seed_dir) {
  std::vector<SeedRow> rows;
  const json doc = load_json((seed_dir / "report.json").string());
  if (doc.value("status", std::string{}) != "ok") return rows;
  for (const auto& r : doc.at("runs")) {
    SeedRow row;
    row.key = {r.at("method").get<std::string>(), r.at("gamma").get<double>(), r.at("eps").get<double>()};
    row.mean_abs_corr = r.at("eval").at("mean_abs_corr").get<double>();
    row.mean_r2 = r.at("eval").at("mean_r2").get<double>();
    rows.push_back(row);
  }
  return rows;
}

struct Aggregate {
  RunKey key;
  int n = 0;
  double corr_mean = 0.0, corr_std = 0.0, r2_mean = 0.0, r2_std = 0.0;
};

inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Aggregates every per-seed report under `run_dir` into summary.csv,
/// plot.csv (long format) and table.csv (rows eps, columns method/gamma).
inline void emit_report(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir)) throw InputError("no run directory " + run_dir.string());
  std::vector<std::filesystem::path> seeds;
  for (const auto& e : std::filesystem::directory_iterator(run_dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "report.json")) seeds.push_back(e.path());
  std::sort(seeds.begin(), seeds.end());
  std::map<RunKey, std::pair<std::vector<double>, std::vector<double>>> acc;
  std::string hash;
  for (const auto& d : seeds) {
    const json doc = load_json((d / "report.json").string());
    if (doc.contains("verdict") || doc.contains("causal")) continue;
    if (hash.empty()) hash = doc.at("config_hash").get<std::string>();
    for (const auto& row : read_seed_rows(d)) {
      acc[row.key].first.push_back(row.mean_abs_corr);
      acc[row.key].second.push_back(row.mean_r2);
    }
  }
  if (acc.empty()) throw InputError("no successful per-seed reports in " + run_dir.string());
  const std::string prefix = detail::csv_prefix(hash);

  std::ostringstream summary, plot, table;
  summary << "config_hash,version,method,gamma,eps,n,mean_abs_corr,std_abs_corr,mean_r2,std_r2\n";
  plot << "config_hash,version,series,x,y\n";
  std::set<std::string> series;
  std::set<double> eps;
  std::map<std::pair<double, std::string>, double> cell;
  for (const auto& [k, v] : acc) {
    const auto [cm, cs] = mean_and_sample_std(v.first);
    const auto [rm, rs] = mean_and_sample_std(v.second);
    summary << prefix << ',' << k.method << ',' << format_double(k.gamma) << ',' << format_double(k.eps) << ','
            << v.first.size() << ',' << format_double(cm) << ',' << format_double(cs) << ',' << format_double(rm)
            << ',' << format_double(rs) << '\n';
    plot << prefix << ',' << k.series() << ',' << format_double(k.eps) << ',' << format_double(cm) << '\n';
    series.insert(k.series());
    eps.insert(k.eps);
    cell[{k.eps, k.series()}] = cm;
  }
  table << "config_hash,version,eps";
  for (const auto& s : series) table << ',' << s;
  table << '\n';
  for (double e : eps) {
    table << prefix << ',' << format_double(e);
    for (const auto& s : series) {
      auto it = cell.find({e, s});
      table << ',' << (it == cell.end() ? std::string{} : format_double(it->second));
    }
    table << '\n';
  }
  write_text((run_dir / "summary.csv").string(), summary.str());
  write_text((run_dir / "plot.csv").string(), plot.str());
  write_text((run_dir / "table.csv").string(), table.str());
}

// ---------------------------------------------------------------- causal runs

inline SemSpec sem_for_seed(const CausalSettings& cs, std::uint64_t seed) {
  SemSpec s = cs.sem;
  s.seed = seed;
  s.reverse = cs.reverse == "always" || (cs.reverse == "alternate" && seed % 2 == 0);
  return s;
}

inline CausalConfig causal_config_for_seed(const ExperimentConfig& c, std::uint64_t seed) {
  CausalConfig cc;
  cc.train = c.methods.at(0);
  cc.train.seed = seed;
  cc.whitening = c.whitening;
  cc.hsic_samples = c.causal->hsic_samples;
  cc.permutations = c.causal->permutations;
  cc.level = c.causal->level;
  return cc;
}

/// causal_summary.csv: verdict counts over every per-seed causal report.
inline void emit_causal_summary(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir)) throw InputError("no run directory " + run_dir.string());
  int n = 0, correct = 0, reversed = 0, inconclusive = 0;
  std::string hash;
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    if (!e.is_directory() || !std::filesystem::exists(e.path() / "report.json")) continue;
    const json doc = load_json((e.path() / "report.json").string());
    if (doc.value("status", std::string{}) != "ok" || !doc.contains("causal")) continue;
    hash = doc.at("config_hash").get<std::string>();
    ++n;
    const auto v = doc.at("causal").at("verdict").get<std::string>();
    const auto t = doc.at("causal").at("truth").get<std::string>();
    if (v == "inconclusive")
      ++inconclusive;
    else if (v == t)
      ++correct;
    else
      ++reversed;
  }
  if (n == 0) throw InputError("no successful causal reports in " + run_dir.string());
  std::ostringstream sum;
  sum << "config_hash,version,n,correct,reversed,inconclusive\n"
      << detail::csv_prefix(hash) << ',' << n << ',' << correct << ',' << reversed << ',' << inconclusive << '\n';
  write_text((run_dir / "causal_summary.csv").string(), sum.str());
}

/// Per seed: report.json (verdict and p-values) and edges.csv; then
/// causal_summary.csv over all seeds.
inline RunSummary run_causal(const ExperimentConfig& c, const RunOptions& o) {
  if (!c.causal) throw ConfigError("causal", "section is required for causal runs");
  RunSummary s{config_hash(c), {}, {}};
  s.dir = detail::run_dir(o, s.hash);
  std::filesystem::create_directories(s.dir);
  save_json((s.dir / "config.json").string(),
            {{"config_hash", s.hash}, {"version", kVersion}, {"config", to_json(c)}});
  const auto log = detail::logger(o.verbose);
  const std::string prefix = detail::csv_prefix(s.hash);
  s.failed = detail::for_each_seed(c.seeds, o.parallel, [&](std::uint64_t seed) {
    const auto dir = detail::seed_dir(o, s.hash, seed);
    std::filesystem::create_directories(dir);
    try {
      const auto data = generate_sem(sem_for_seed(*c.causal, seed));
      const auto res = run_causal_pipeline(data, causal_config_for_seed(c, seed));
      log("seed " + std::to_string(seed) + ": " + to_string(res.verdict.verdict) + " (truth " +
          to_string(res.truth) + ")");
      json doc = {{"config_hash", s.hash}, {"version", kVersion}, {"seed", seed}, {"status", "ok"},
                  {"causal", to_json(res)}};
      save_json((dir / "report.json").string(), doc);
      std::ostringstream edges;
      edges << "config_hash,version,seed,from,to,verdict,truth,p_x1_n1,p_x1_n2,p_x2_n1,p_x2_n2\n";
      std::string from, to;
      if (res.verdict.verdict == Direction::x1_to_x2) from = "x1", to = "x2";
      if (res.verdict.verdict == Direction::x2_to_x1) from = "x2", to = "x1";
      edges << prefix << ',' << seed << ',' << from << ',' << to << ',' << to_string(res.verdict.verdict) << ','
            << to_string(res.truth);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) edges << ',' << format_double(res.verdict.p[i][j]);
      edges << '\n';
      write_text((dir / "edges.csv").string(), edges.str());
      std::ostringstream trace;
      trace << detail::kTraceHeader;
      detail::write_trace(trace, prefix, seed, RunKey{to_string(c.methods[0].method), c.methods[0].effective_gamma(), 0.0},
                          res.trace);
      write_text((dir / "loss_trace.csv").string(), trace.str());
    } catch (const std::exception& e) {
      save_json((dir / "report.json").string(), {{"config_hash", s.hash}, {"version", kVersion}, {"seed", seed},
                                                 {"status", "failed"}, {"error", e.what()}});
      throw;
    }
  });
  if (s.failed.size() < c.seeds.size()) emit_causal_summary(s.dir);
  return s;
}

}  // namespace rnica
