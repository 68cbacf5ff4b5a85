#pragma once

#include <charconv>
#include <cmath>
#include <sstream>
#include <string_view>
#include <cstdint>
#include <string>
#include <vector>

#include "rnica/checkpoint.hpp"
#include "rnica/error.hpp"
#include "rnica/matrix.hpp"
#include "rnica/network.hpp"
#include "rnica/random.hpp"

namespace rnica {

/// Piecewise-stationary Laplace sources: K segments of equal length, one
/// Laplace scale per (segment, component) drawn uniformly from [scale_lo, scale_hi].
struct SegmentedSourceSpec {
  int dim = 4;
  int segments = 32;
  int segment_length = 256;
  double scale_lo = 1e-3;
  double scale_hi = 1.0 / std::sqrt(2.0);
  std::uint64_t seed = 1;

  Eigen::Index length() const { return static_cast<Eigen::Index>(segments) * segment_length; }

  void validate() const {
    if (dim < 1) throw ConfigError("dim", "must be >= 1");
    if (segments < 2) throw ConfigError("segments", "must be >= 2");
    if (segment_length < 1) throw ConfigError("segment_length", "must be >= 1");
    if (!(scale_lo > 0.0 && scale_hi >= scale_lo && std::isfinite(scale_hi)))
      throw ConfigError("scale_range", "must be a finite interval inside (0, inf)");
  }
};

struct SegmentedSources {
  Matrix sources;           // T x d
  std::vector<int> labels;  // segment index 0..K-1 per sample
  Matrix scales;            // K x d Laplace scales
};

inline SegmentedSources gen_segmented_sources(const SegmentedSourceSpec& spec) {
  spec.validate();
  auto rng = make_stream(spec.seed, "sources");
  SegmentedSources out;
  out.scales.resize(spec.segments, spec.dim);
  for (Eigen::Index k = 0; k < out.scales.size(); ++k)
    out.scales.data()[k] = rng.uniform(spec.scale_lo, spec.scale_hi);
  out.sources.resize(spec.length(), spec.dim);
  out.labels.resize(static_cast<std::size_t>(spec.length()));
  Eigen::Index t = 0;
  for (int k = 0; k < spec.segments; ++k) {
    for (int i = 0; i < spec.segment_length; ++i, ++t) {
      out.labels[static_cast<std::size_t>(t)] = k;
      for (int j = 0; j < spec.dim; ++j) out.sources(t, j) = rng.laplace(out.scales(k, j));
    }
  }
  return out;
}

/// Componentwise AR(1) with unit-scale Laplace innovations.
struct ArSourceSpec {
  int dim = 4;
  Eigen::Index length = 65536;
  double rho = 0.7;
  int burn_in = 1000;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim < 1) throw ConfigError("dim", "must be >= 1");
    if (length < 2) throw ConfigError("T", "must be >= 2");
    if (!(std::abs(rho) < 1.0)) throw ConfigError("rho", "|rho| must be < 1");
    if (burn_in < 0) throw ConfigError("burn_in", "must be >= 0");
  }
};

inline Matrix gen_ar_sources(const ArSourceSpec& spec) {
  spec.validate();
  auto rng = make_stream(spec.seed, "sources");
  Vector state = Vector::Zero(spec.dim);
  for (int b = 0; b < spec.burn_in; ++b)
    for (int j = 0; j < spec.dim; ++j) state[j] = spec.rho * state[j] + rng.laplace(1.0);
  Matrix s(spec.length, spec.dim);
  for (Eigen::Index t = 0; t < spec.length; ++t) {
    for (int j = 0; j < spec.dim; ++j) {
      state[j] = spec.rho * state[j] + rng.laplace(1.0);
      s(t, j) = state[j];
    }
  }
  return s;
}

enum class OutlierFamily { laplace, modulated_gauss_mixture, replacement_laplace };

inline const char* to_string(OutlierFamily f) {
  switch (f) {
    case OutlierFamily::laplace: return "laplace";
    case OutlierFamily::modulated_gauss_mixture: return "modulated_gauss_mixture";
    case OutlierFamily::replacement_laplace: return "replacement_laplace";
  }
  return "?";
}

inline OutlierFamily outlier_family_from_string(const std::string& s) {
  if (s == "laplace") return OutlierFamily::laplace;
  if (s == "modulated_gauss_mixture") return OutlierFamily::modulated_gauss_mixture;
  if (s == "replacement_laplace") return OutlierFamily::replacement_laplace;
  throw ConfigError("contamination.family", "unknown outlier family '" + s + "'");
}

/// Per-sample replacement contamination: each time point is replaced with
/// probability eps by an independent draw from the outlier family.
///
/// laplace / replacement_laplace: iid Laplace(0, scale) per component.
/// modulated_gauss_mixture: per component, an equal-weight mixture of
/// N(m+, sd^2) and N(m-, sd^2) whose means are redrawn for every segment from
/// Uniform[pos_lo, pos_hi] and Uniform[-pos_hi, -pos_lo].
struct ContaminationSpec {
  double eps = 0.0;
  OutlierFamily family = OutlierFamily::laplace;
  double scale = 3.0;
  double pos_lo = 1.0;
  double pos_hi = 4.0;
  double sd = 0.5;
  double weight = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("contamination.eps", "must lie in [0, 1)");
    if (!(scale > 0.0)) throw ConfigError("contamination.scale", "must be > 0");
    if (!(sd > 0.0)) throw ConfigError("contamination.sd", "must be > 0");
    if (!(pos_lo <= pos_hi)) throw ConfigError("contamination.mean_range", "empty interval");
    if (!(weight > 0.0 && weight < 1.0)) throw ConfigError("contamination.weight", "must lie in (0, 1)");
  }
};

struct Contaminated {
  Matrix sources;
  std::vector<std::uint8_t> mask;  // 1 where the sample was replaced
};

inline Contaminated contaminate(const Matrix& sources, const std::vector<int>& labels,
                                const ContaminationSpec& spec) {
  spec.validate();
  const Eigen::Index T = sources.rows();
  const Eigen::Index d = sources.cols();
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != T)
    throw ShapeError("contaminate: label count mismatch");

  auto mask_rng = make_stream(spec.seed, "outlier-mask");
  auto value_rng = make_stream(spec.seed, "outlier-values");
  auto means_rng = make_stream(spec.seed, "outlier-means");

  // Per-segment mixture means, drawn up front so they do not depend on eps.
  int segments = 1;
  for (int u : labels) segments = std::max(segments, u + 1);
  Matrix pos_mean(segments, d), neg_mean(segments, d);
  if (spec.family == OutlierFamily::modulated_gauss_mixture) {
    for (int k = 0; k < segments; ++k)
      for (Eigen::Index j = 0; j < d; ++j) {
        pos_mean(k, j) = means_rng.uniform(spec.pos_lo, spec.pos_hi);
        neg_mean(k, j) = means_rng.uniform(-spec.pos_hi, -spec.pos_lo);
      }
  }

  Contaminated out{sources, std::vector<std::uint8_t>(static_cast<std::size_t>(T), 0)};
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!(mask_rng.uniform() < spec.eps)) continue;
    out.mask[static_cast<std::size_t>(t)] = 1;
    const int k = labels.empty() ? 0 : labels[static_cast<std::size_t>(t)];
    for (Eigen::Index j = 0; j < d; ++j) {
      switch (spec.family) {
        case OutlierFamily::laplace:
        case OutlierFamily::replacement_laplace:
          out.sources(t, j) = value_rng.laplace(spec.scale);
          break;
        case OutlierFamily::modulated_gauss_mixture: {
          const bool upper = value_rng.uniform() < spec.weight;
          out.sources(t, j) = (upper ? pos_mean(k, j) : neg_mean(k, j)) + spec.sd * value_rng.normal();
          break;
        }
      }
    }
  }
  return out;
}

inline double condition_number(const Matrix& w) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  const auto& sv = svd.singularValues();
  const double smallest = sv[sv.size() - 1];
  return smallest > 0.0 ? sv[0] / smallest : std::numeric_limits<double>::infinity();
}

struct MixingResult {
  Matrix x;
  FeatureNetwork mixing;
};

/// Applies an invertible mixing network.
inline Matrix apply_mixing(const FeatureNetwork& mixing, const Matrix& sources) {
  return predict(mixing, sources);
}

/// Random invertible mixing MLP: `layers` square weight matrices with entries
/// Uniform[-1, 1], each resampled until its condition number is <= max_condition,
/// zero biases, leaky-ReLU(slope) on hidden layers and a linear output layer.
inline MixingResult mix_nonlinear(const Matrix& sources, int layers, std::uint64_t seed, double slope = 0.2,
                                  double max_condition = 1e3) {
  if (layers < 1) throw ConfigError("mixing_layers", "must be >= 1");
  const Eigen::Index d = sources.cols();
  auto rng = make_stream(seed, "mixing");
  MixingResult out;
  for (int l = 0; l < layers; ++l) {
    Layer layer;
    layer.activation = l + 1 < layers ? Activation::leaky_relu : Activation::identity;
    layer.slope = slope;
    layer.bias = Vector::Zero(d);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      layer.weight.resize(d, d);
      for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = rng.uniform(-1.0, 1.0);
      ok = condition_number(layer.weight) <= max_condition;
    }
    if (!ok) throw GenerationError("mix_nonlinear: no well-conditioned weight after 100 resamples");
    out.mixing.layers.push_back(std::move(layer));
  }
  out.x = apply_mixing(out.mixing, sources);
  return out;
}

/// Exact inverse of a leaky-ReLU mixing network.
inline Matrix invert_mixing(const FeatureNetwork& mixing, const Matrix& x) {
  Matrix a = x;
  for (std::size_t li = mixing.layers.size(); li-- > 0;) {
    const Layer& l = mixing.layers[li];
    if (l.activation != Activation::leaky_relu && l.activation != Activation::identity)
      throw InputError("invert_mixing: only leaky_relu/identity layers are invertible here");
    if (l.activation == Activation::leaky_relu) {
      if (!(l.slope > 0.0)) throw NumericalError("invert_mixing: leaky slope must be > 0");
      a = a.unaryExpr([s = l.slope](double v) { return v > 0.0 ? v : v / s; });
    }
    a.rowwise() -= l.bias.transpose();
    // a_prev W^T = a  =>  W a_prev^T = a^T
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(l.weight);
    a = lu.solve(a.transpose()).transpose();
  }
  return a;
}

/// Positive pairs (x(t), x(t-1)) for t = 1..T-1 and negatives (x(t), x(p(t)-1))
/// where p permutes 1..T-1 uniformly. Stored as row indices into the series.
struct PclPairs {
  std::vector<Eigen::Index> current;
  std::vector<Eigen::Index> lagged;
  std::vector<Eigen::Index> negative_lagged;
};

inline PclPairs make_pcl_pairs(Eigen::Index length, Xoshiro256& rng) {
  if (length < 2) throw InputError("make_pcl_pairs: need T >= 2");
  PclPairs p;
  const auto n = static_cast<std::size_t>(length - 1);
  p.current.resize(n);
  p.lagged.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.current[i] = static_cast<Eigen::Index>(i + 1);
    p.lagged[i] = static_cast<Eigen::Index>(i);
  }
  const auto perm = rng.permutation(n);
  p.negative_lagged.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.negative_lagged[i] = p.lagged[perm[i]];
  return p;
}

inline PclPairs make_pcl_pairs(const Matrix& series, std::uint64_t seed) {
  auto rng = make_stream(seed, "permutation");
  return make_pcl_pairs(series.rows(), rng);
}

/// Observed series with auxiliary information and evaluation ground truth.
struct LabeledSeries {
  Matrix x;                             // T x d observations
  std::vector<int> labels;              // segment labels (segmented data), else empty
  bool lagged_auxiliary = false;        // auxiliary variable is x(t-1)
  Matrix sources_clean;                 // T x d, before contamination
  Matrix sources;                       // T x d, what was mixed
  std::vector<std::uint8_t> outlier_mask;
  FeatureNetwork mixing;
  json provenance = json::object();

  Eigen::Index length() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
  int segments() const {
    int k = 0;
    for (int u : labels) k = std::max(k, u + 1);
    return k;
  }
};

inline json to_json(const SegmentedSourceSpec& s) {
  return {{"kind", "segmented"}, {"dim", s.dim}, {"segments", s.segments}, {"segment_length", s.segment_length},
          {"scale_range", {s.scale_lo, s.scale_hi}}, {"seed", s.seed}};
}
inline json to_json(const ArSourceSpec& s) {
  return {{"kind", "ar"}, {"dim", s.dim}, {"T", s.length}, {"rho", s.rho}, {"burn_in", s.burn_in}, {"seed", s.seed}};
}
inline json to_json(const ContaminationSpec& c) {
  return {{"eps", c.eps}, {"family", to_string(c.family)}, {"scale", c.scale},
          {"mean_range", {c.pos_lo, c.pos_hi}}, {"sd", c.sd}, {"weight", c.weight}, {"seed", c.seed}};
}

/// sources -> contaminate -> mix, for segmented (TCL-style) data.
inline LabeledSeries generate_segmented_series(const SegmentedSourceSpec& src, const ContaminationSpec& con,
                                               int mixing_layers, std::uint64_t mixing_seed) {
  auto gen = gen_segmented_sources(src);
  auto cont = contaminate(gen.sources, gen.labels, con);
  auto mixed = mix_nonlinear(cont.sources, mixing_layers, mixing_seed);
  LabeledSeries ds;
  ds.x = std::move(mixed.x);
  ds.labels = std::move(gen.labels);
  ds.sources_clean = std::move(gen.sources);
  ds.sources = std::move(cont.sources);
  ds.outlier_mask = std::move(cont.mask);
  ds.mixing = std::move(mixed.mixing);
  ds.provenance = {{"sources", to_json(src)}, {"contamination", to_json(con)},
                   {"mixing", {{"layers", mixing_layers}, {"seed", mixing_seed}, {"slope", 0.2}}}};
  return ds;
}

/// sources -> contaminate -> mix, for autoregressive (PCL-style) data.
inline LabeledSeries generate_ar_series(const ArSourceSpec& src, const ContaminationSpec& con, int mixing_layers,
                                        std::uint64_t mixing_seed) {
  Matrix s = gen_ar_sources(src);
  auto cont = contaminate(s, {}, con);
  auto mixed = mix_nonlinear(cont.sources, mixing_layers, mixing_seed);
  LabeledSeries ds;
  ds.x = std::move(mixed.x);
  ds.lagged_auxiliary = true;
  ds.sources_clean = std::move(s);
  ds.sources = std::move(cont.sources);
  ds.outlier_mask = std::move(cont.mask);
  ds.mixing = std::move(mixed.mixing);
  ds.provenance = {{"sources", to_json(src)}, {"contamination", to_json(con)},
                   {"mixing", {{"layers", mixing_layers}, {"seed", mixing_seed}, {"slope", 0.2}}}};
  return ds;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InputError("dataset: cannot parse number '" + std::string(s) + "'");
  return v;
}

// Dataset file: line 1 is a compact JSON header (shape, mixing network,
// provenance), line 2 the CSV column names, then one row per time point:
//   label, outlier, x_0..x_{d-1}, s_0..s_{d-1} (clean), c_0..c_{d-1} (mixed sources)
inline std::string dataset_to_text(const LabeledSeries& ds) {
  const Eigen::Index d = ds.dim();
  json header = {{"kind", "rnica_dataset"},
                 {"T", ds.length()},
                 {"dim", d},
                 {"lagged_auxiliary", ds.lagged_auxiliary},
                 {"mixing", network_to_json(ds.mixing)},
                 {"provenance", ds.provenance}};
  std::string out = header.dump() + "\n";
  out += "label,outlier";
  for (const char* p : {"x", "s", "c"})
    for (Eigen::Index j = 0; j < d; ++j) out += "," + std::string(p) + std::to_string(j);
  out += "\n";
  for (Eigen::Index t = 0; t < ds.length(); ++t) {
    out += std::to_string(ds.labels.empty() ? -1 : ds.labels[static_cast<std::size_t>(t)]);
    out += ds.outlier_mask.empty() ? ",0" : (ds.outlier_mask[static_cast<std::size_t>(t)] ? ",1" : ",0");
    for (const Matrix* m : {&ds.x, &ds.sources_clean, &ds.sources})
      for (Eigen::Index j = 0; j < d; ++j) out += "," + format_double((*m)(t, j));
    out += "\n";
  }
  return out;
}

inline LabeledSeries dataset_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError("dataset: empty file");
  const json header = json::parse(line);
  if (header.value("kind", std::string{}) != "rnica_dataset") throw InputError("dataset: bad header");
  const auto T = header.at("T").get<Eigen::Index>();
  const auto d = header.at("dim").get<Eigen::Index>();
  LabeledSeries ds;
  ds.lagged_auxiliary = header.at("lagged_auxiliary").get<bool>();
  ds.mixing = network_from_json(header.at("mixing"));
  ds.provenance = header.at("provenance");
  ds.x.resize(T, d);
  ds.sources_clean.resize(T, d);
  ds.sources.resize(T, d);
  ds.outlier_mask.resize(static_cast<std::size_t>(T));
  std::vector<int> labels(static_cast<std::size_t>(T));
  std::getline(in, line);  // column names
  bool any_label = false;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!std::getline(in, line)) throw ShapeError("dataset: fewer rows than header T");
    std::vector<std::string_view> f;
    std::string_view sv(line);
    for (std::size_t pos; (pos = sv.find(',')) != std::string_view::npos; sv.remove_prefix(pos + 1))
      f.push_back(sv.substr(0, pos));
    f.push_back(sv);
    if (static_cast<Eigen::Index>(f.size()) != 2 + 3 * d) throw ShapeError("dataset: bad column count");
    labels[static_cast<std::size_t>(t)] = static_cast<int>(parse_double(f[0]));
    any_label = any_label || labels[static_cast<std::size_t>(t)] >= 0;
    ds.outlier_mask[static_cast<std::size_t>(t)] = f[1] == "1" ? 1 : 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      ds.x(t, j) = parse_double(f[static_cast<std::size_t>(2 + j)]);
      ds.sources_clean(t, j) = parse_double(f[static_cast<std::size_t>(2 + d + j)]);
      ds.sources(t, j) = parse_double(f[static_cast<std::size_t>(2 + 2 * d + j)]);
    }
  }
  if (any_label) ds.labels = std::move(labels);
  return ds;
}

inline void save_dataset(const std::string& path, const LabeledSeries& ds) { write_text(path, dataset_to_text(ds)); }
inline LabeledSeries load_dataset(const std::string& path) { return dataset_from_text(read_text(path)); }

}  // namespace rnica
