#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "rnica/checkpoint.hpp"
#include "rnica/datagen.hpp"
#include "rnica/error.hpp"
#include "rnica/losses.hpp"
#include "rnica/matrix.hpp"
#include "rnica/network.hpp"
#include "rnica/random.hpp"

namespace rnica {

enum class Method { tcl, rtcl, pcl, rpcl };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::tcl: return "tcl";
    case Method::rtcl: return "rtcl";
    case Method::pcl: return "pcl";
    case Method::rpcl: return "rpcl";
  }
  return "?";
}

inline Method method_from_string(const std::string& s, const std::string& field = "method") {
  if (s == "tcl") return Method::tcl;
  if (s == "rtcl") return Method::rtcl;
  if (s == "pcl") return Method::pcl;
  if (s == "rpcl") return Method::rpcl;
  throw ConfigError(field, "unknown method '" + s + "'");
}

inline bool is_robust(Method m) { return m == Method::rtcl || m == Method::rpcl; }
inline bool is_segment_method(Method m) { return m == Method::tcl || m == Method::rtcl; }

struct TrainConfig {
  Method method = Method::tcl;
  double learning_rate = 1e-3;
  int epochs = 400;
  int batch_size = 256;
  double l2 = 1e-4;
  int warm_start_epochs = 0;  // baseline epochs run before a robust method
  double gamma = 1.0;         // ignored by tcl / pcl
  int hidden_multiplier = 4;
  bool freeze_negatives = false;
  bool cosine_decay = false;
  std::uint64_t seed = 1;

  double effective_gamma() const { return is_robust(method) ? gamma : 0.0; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
    if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (!(l2 >= 0.0)) throw ConfigError("train.l2", "must be >= 0");
    if (warm_start_epochs < 0) throw ConfigError("train.warm_start_epochs", "must be >= 0");
    if (hidden_multiplier < 1) throw ConfigError("train.hidden_multiplier", "must be >= 1");
    if (is_robust(method) && !(gamma > 0.0 && std::isfinite(gamma)))
      throw ConfigError("train.gamma", std::string(to_string(method)) + " needs gamma > 0");
  }
};

// ---------------------------------------------------------------- Adam

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  long step = 0;

  void reset() {
    m.clear();
    v.clear();
    step = 0;
  }
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericalError("adam_step: non-finite gradient at index " + std::to_string(i));
  if (s.m.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  if (s.m.size() != params.size()) throw StateError("adam_step: state belongs to a different parameter set");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    params[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.eps);
  }
}

inline std::vector<double> flatten_blocks(const std::vector<ParameterBlock>& blocks) {
  std::vector<double> flat;
  for (const auto& b : blocks) flat.insert(flat.end(), b.values.begin(), b.values.end());
  return flat;
}

inline void assign_blocks(const std::vector<ParameterBlock>& blocks, std::span<const double> flat) {
  std::size_t off = 0;
  for (const auto& b : blocks) {
    if (off + b.values.size() > flat.size()) throw ShapeError("assign_blocks: flat vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), b.values.size(), b.values.begin());
    off += b.values.size();
  }
  if (off != flat.size()) throw ShapeError("assign_blocks: flat vector too long");
}

inline void adam_step(AdamState& s, const std::vector<ParameterBlock>& blocks, std::span<const double> grads,
                      double lr) {
  auto flat = flatten_blocks(blocks);
  adam_step(s, std::span<double>(flat), grads, lr);
  assign_blocks(blocks, flat);
}

// ---------------------------------------------------------------- heads

/// Segment head: logits z[t, u] = w_u . h(x_t) + b_u.
struct RtclHead {
  Matrix weight;  // K x d
  Vector bias;    // K

  Matrix logits(const Matrix& h) const {
    Matrix z = h * weight.transpose();
    z.rowwise() += bias.transpose();
    return z;
  }
};

/// Pair head: z = sum_i |a1_i h_i(x) + a2_i h_i(y) + b_i| - (abar_i h_i(x) + bbar_i)^2 + c.
struct RpclHead {
  Vector a1, a2, b, abar, bbar;
  Vector c = Vector::Zero(1);

  Vector scores(const Matrix& hx, const Matrix& hy) const {
    Matrix q = hx * a1.asDiagonal();
    q += hy * a2.asDiagonal();
    q.rowwise() += b.transpose();
    Matrix r = hx * abar.asDiagonal();
    r.rowwise() += bbar.transpose();
    return (q.cwiseAbs() - r.cwiseProduct(r)).rowwise().sum().array() + c[0];
  }
};

struct TclModel {
  FeatureNetwork net;
  RtclHead head;

  std::vector<ParameterBlock> blocks() {
    auto out = parameter_blocks(net);
    out.push_back({{head.weight.data(), static_cast<std::size_t>(head.weight.size())}, true});
    out.push_back({{head.bias.data(), static_cast<std::size_t>(head.bias.size())}, false});
    return out;
  }
};

struct PclModel {
  FeatureNetwork net;
  RpclHead head;

  std::vector<ParameterBlock> blocks() {
    auto out = parameter_blocks(net);
    auto add = [&](Vector& v, bool w) { out.push_back({{v.data(), static_cast<std::size_t>(v.size())}, w}); };
    add(head.a1, true);
    add(head.a2, true);
    add(head.b, false);
    add(head.abar, true);
    add(head.bbar, false);
    add(head.c, false);
    return out;
  }
};

/// Feature extractor: d -> k*d maxout -> k*d maxout -> d, with an
/// abs output for segment methods and a linear output for pair methods.
inline FeatureNetwork make_feature_network(Eigen::Index d, Method m, Xoshiro256& rng, int hidden_multiplier = 4) {
  const Eigen::Index hidden = hidden_multiplier * d;
  const Activation last = is_segment_method(m) ? Activation::abs : Activation::identity;
  return make_network(d, {{hidden, Activation::maxout2}, {hidden, Activation::maxout2}, {d, last}}, rng);
}

inline TclModel init_tcl_model(Eigen::Index d, int segments, const TrainConfig& cfg) {
  auto rng = make_stream(cfg.seed, "init");
  TclModel m;
  m.net = make_feature_network(d, Method::tcl, rng, cfg.hidden_multiplier);
  const double a = std::sqrt(6.0 / static_cast<double>(d + segments));
  m.head.weight.resize(segments, d);
  for (Eigen::Index k = 0; k < m.head.weight.size(); ++k) m.head.weight.data()[k] = rng.uniform(-a, a);
  m.head.bias = Vector::Zero(segments);
  return m;
}

inline PclModel init_pcl_model(Eigen::Index d, const TrainConfig& cfg) {
  auto rng = make_stream(cfg.seed, "init");
  PclModel m;
  m.net = make_feature_network(d, Method::pcl, rng, cfg.hidden_multiplier);
  auto uni = [&](Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
    return v;
  };
  m.head.a1 = uni(d);
  m.head.a2 = uni(d);
  m.head.abar = uni(d);
  m.head.b = Vector::Zero(d);
  m.head.bbar = Vector::Zero(d);
  m.head.c = Vector::Zero(1);
  return m;
}

// ---------------------------------------------------------------- objectives

struct Objective {
  double loss = 0.0;     // data term
  double penalty = 0.0;  // (l2 / 2) * sum of squared weights
  std::vector<double> grad;

  double total() const { return loss + penalty; }
};

namespace detail {

inline void append(std::vector<double>& out, const double* p, Eigen::Index n) { out.insert(out.end(), p, p + n); }

inline void append_network(std::vector<double>& out, const GradientBundle& g) {
  for (const auto& blk : gradient_blocks(g)) out.insert(out.end(), blk.begin(), blk.end());
}

inline void add_penalty(Objective& obj, const std::vector<ParameterBlock>& blocks, double l2) {
  if (l2 == 0.0) return;
  double sq = 0.0;
  std::size_t off = 0;
  for (const auto& b : blocks) {
    if (b.is_weight)
      for (std::size_t i = 0; i < b.values.size(); ++i) {
        sq += b.values[i] * b.values[i];
        obj.grad[off + i] += l2 * b.values[i];
      }
    off += b.values.size();
  }
  obj.penalty = 0.5 * l2 * sq;
}

}  // namespace detail

/// Multiclass objective on one minibatch. gamma == 0 is softmax cross entropy.
inline Objective tcl_objective(const TclModel& model, const Matrix& xb, std::span<const int> labels, double gamma,
                               double l2) {
  auto fr = forward(model.net, xb);
  const Matrix& h = fr.output;
  const auto lr = gamma_multiclass_loss(model.head.logits(h), labels, gamma);
  const Matrix& dz = lr.d_logits;
  const Matrix dw = dz.transpose() * h;
  const Vector db = dz.colwise().sum().transpose();
  const Matrix dh = dz * model.head.weight;
  const auto g = backward(model.net, fr.tape, dh);

  Objective obj;
  obj.loss = lr.loss;
  detail::append_network(obj.grad, g);
  detail::append(obj.grad, dw.data(), dw.size());
  detail::append(obj.grad, db.data(), db.size());
  detail::add_penalty(obj, const_cast<TclModel&>(model).blocks(), l2);
  return obj;
}

/// Binary pair objective: positives (x_cur, x_pos), negatives (x_cur, x_neg).
/// One forward pass over the stacked 3B rows.
inline Objective pcl_objective(const PclModel& model, const Matrix& x_cur, const Matrix& x_pos, const Matrix& x_neg,
                               double gamma, double l2) {
  const Eigen::Index B = x_cur.rows();
  if (x_pos.rows() != B || x_neg.rows() != B) throw ShapeError("pcl_objective: batch sizes differ");
  Matrix stacked(3 * B, x_cur.cols());
  stacked << x_cur, x_pos, x_neg;
  auto fr = forward(model.net, stacked);
  const Matrix hx = fr.output.topRows(B);
  const Matrix hp = fr.output.middleRows(B, B);
  const Matrix hn = fr.output.bottomRows(B);
  const RpclHead& hd = model.head;
  const Vector zp = hd.scores(hx, hp);
  const Vector zn = hd.scores(hx, hn);
  const auto lr = gamma_binary_loss(std::span<const double>(zp.data(), static_cast<std::size_t>(B)),
                                    std::span<const double>(zn.data(), static_cast<std::size_t>(B)), gamma);

  const Eigen::Index d = hx.cols();
  Matrix dh = Matrix::Zero(3 * B, d);
  Vector da1 = Vector::Zero(d), da2 = Vector::Zero(d), db = Vector::Zero(d), dab = Vector::Zero(d),
         dbb = Vector::Zero(d), dc = Vector::Zero(1);
  auto accumulate = [&](const Matrix& hy, std::span<const double> dz, Eigen::Index y_off) {
    for (Eigen::Index t = 0; t < B; ++t) {
      const double w = dz[static_cast<std::size_t>(t)];
      dc[0] += w;
      for (Eigen::Index i = 0; i < d; ++i) {
        const double q = hd.a1[i] * hx(t, i) + hd.a2[i] * hy(t, i) + hd.b[i];
        const double sg = q > 0.0 ? 1.0 : (q < 0.0 ? -1.0 : 0.0);
        const double r = hd.abar[i] * hx(t, i) + hd.bbar[i];
        dh(t, i) += w * (sg * hd.a1[i] - 2.0 * r * hd.abar[i]);
        dh(y_off + t, i) += w * sg * hd.a2[i];
        da1[i] += w * sg * hx(t, i);
        da2[i] += w * sg * hy(t, i);
        db[i] += w * sg;
        dab[i] += -2.0 * w * r * hx(t, i);
        dbb[i] += -2.0 * w * r;
      }
    }
  };
  accumulate(hp, lr.d_positive, B);
  accumulate(hn, lr.d_negative, 2 * B);
  const auto g = backward(model.net, fr.tape, dh);

  Objective obj;
  obj.loss = lr.loss;
  detail::append_network(obj.grad, g);
  for (const Vector* v : {&da1, &da2, &db, &dab, &dbb, &dc}) detail::append(obj.grad, v->data(), v->size());
  detail::add_penalty(obj, const_cast<PclModel&>(model).blocks(), l2);
  return obj;
}

// ---------------------------------------------------------------- loops

struct LossTraceRow {
  int epoch = 0;
  std::string phase;  // "warm" or "main"
  double loss = 0.0;
  double grad_norm = 0.0;
};

template <class Model>
struct TrainResult {
  Model model;
  std::vector<LossTraceRow> trace;
};

namespace detail {

inline Matrix gather_rows(const Matrix& x, std::span<const Eigen::Index> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

inline double epoch_rate(const TrainConfig& cfg, int epoch, int total) {
  if (!cfg.cosine_decay || total <= 1) return cfg.learning_rate;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(total)));
}

inline double norm(const std::vector<double>& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

inline void check_loss(double v, int epoch, std::size_t batch) {
  if (!std::isfinite(v))
    throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch));
}

struct NoHook {
  void operator()(int) const {}
};

// One training phase with a fresh optimizer. `on_epoch` sees the global epoch
// index (trace length) before each epoch's minibatch order is drawn.
template <class Model, class BatchFn, class Hook = NoHook>
void run_epochs(Model& model, const TrainConfig& cfg, int epochs, const std::string& phase, Eigen::Index n_items,
                Xoshiro256& batch_rng, std::vector<LossTraceRow>& trace, BatchFn&& batch_objective,
                Hook on_epoch = {}) {
  AdamState adam;
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < epochs; ++e) {
    on_epoch(static_cast<int>(trace.size()));
    const double lr = epoch_rate(cfg, e, epochs);
    auto order = batch_rng.permutation(static_cast<std::size_t>(n_items));
    double loss_sum = 0.0, norm_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += B, ++batches) {
      const std::size_t end = std::min(order.size(), start + B);
      std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      const Objective obj = batch_objective(model, e, idx);
      check_loss(obj.total(), static_cast<int>(trace.size()), batches);
      loss_sum += obj.total();
      norm_sum += norm(obj.grad);
      adam_step(adam, model.blocks(), obj.grad, lr);
    }
    trace.push_back({static_cast<int>(trace.size()), phase, loss_sum / static_cast<double>(batches),
                     norm_sum / static_cast<double>(batches)});
  }
}

}  // namespace detail

/// TCL (gamma = 0) or RTCL training on segment-labelled observations.
/// RTCL first runs warm_start_epochs of TCL from the same initialization,
/// then continues from the resulting network and head with a fresh optimizer.
inline TrainResult<TclModel> train_tcl_rtcl(const Matrix& x, const std::vector<int>& labels, const TrainConfig& cfg) {
  cfg.validate();
  if (!is_segment_method(cfg.method)) throw ConfigError("train.method", "train_tcl_rtcl needs tcl or rtcl");
  if (labels.empty() || static_cast<Eigen::Index>(labels.size()) != x.rows())
    throw InputError("train_tcl_rtcl: data has no segment labels for every sample");
  require_finite(x, "training data");
  int K = 0;
  for (int u : labels) K = std::max(K, u + 1);
  if (K < 2) throw InputError("train_tcl_rtcl: need at least two segments");

  TrainResult<TclModel> res{init_tcl_model(x.cols(), K, cfg), {}};
  auto batch_rng = make_stream(cfg.seed, "minibatch");
  auto make_fn = [&](double gamma) {
    return [&x, &labels, gamma, l2 = cfg.l2](TclModel& m, int, const std::vector<Eigen::Index>& idx) {
      std::vector<int> lb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) lb[i] = labels[static_cast<std::size_t>(idx[i])];
      return tcl_objective(m, detail::gather_rows(x, idx), lb, gamma, l2);
    };
  };
  if (is_robust(cfg.method) && cfg.warm_start_epochs > 0)
    detail::run_epochs(res.model, cfg, cfg.warm_start_epochs, "warm", x.rows(), batch_rng, res.trace, make_fn(0.0));
  detail::run_epochs(res.model, cfg, cfg.epochs, "main", x.rows(), batch_rng, res.trace,
                     make_fn(cfg.effective_gamma()));
  return res;
}

inline TrainResult<TclModel> train_tcl_rtcl(const LabeledSeries& data, const TrainConfig& cfg) {
  return train_tcl_rtcl(data.x, data.labels, cfg);
}

/// PCL (gamma = 0) or RPCL training on a time series with lagged auxiliary
/// variable. Negatives pair x(t) with x(p(t) - 1); p is redrawn every epoch
/// unless freeze_negatives is set.
inline TrainResult<PclModel> train_pcl_rpcl(const Matrix& x, const TrainConfig& cfg) {
  cfg.validate();
  if (is_segment_method(cfg.method)) throw ConfigError("train.method", "train_pcl_rpcl needs pcl or rpcl");
  if (x.rows() < 2) throw InputError("train_pcl_rpcl: need T >= 2");
  require_finite(x, "training data");

  TrainResult<PclModel> res{init_pcl_model(x.cols(), cfg), {}};
  auto batch_rng = make_stream(cfg.seed, "minibatch");
  auto perm_rng = make_stream(cfg.seed, "permutation");
  PclPairs pairs = make_pcl_pairs(x.rows(), perm_rng);
  auto refresh = [&](int global_epoch) {
    if (global_epoch > 0 && !cfg.freeze_negatives) pairs = make_pcl_pairs(x.rows(), perm_rng);
  };
  auto make_fn = [&](double gamma) {
    return [&, gamma](PclModel& m, int, const std::vector<Eigen::Index>& idx) {
      std::vector<Eigen::Index> cur(idx.size()), pos(idx.size()), neg(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto k = static_cast<std::size_t>(idx[i]);
        cur[i] = pairs.current[k];
        pos[i] = pairs.lagged[k];
        neg[i] = pairs.negative_lagged[k];
      }
      return pcl_objective(m, detail::gather_rows(x, cur), detail::gather_rows(x, pos), detail::gather_rows(x, neg),
                           gamma, cfg.l2);
    };
  };
  const auto n_pairs = static_cast<Eigen::Index>(pairs.current.size());
  if (is_robust(cfg.method) && cfg.warm_start_epochs > 0)
    detail::run_epochs(res.model, cfg, cfg.warm_start_epochs, "warm", n_pairs, batch_rng, res.trace, make_fn(0.0),
                       refresh);
  detail::run_epochs(res.model, cfg, cfg.epochs, "main", n_pairs, batch_rng, res.trace,
                     make_fn(cfg.effective_gamma()), refresh);
  return res;
}

inline TrainResult<PclModel> train_pcl_rpcl(const LabeledSeries& data, const TrainConfig& cfg) {
  if (!data.lagged_auxiliary) throw InputError("train_pcl_rpcl: data has no lagged auxiliary variable");
  return train_pcl_rpcl(data.x, cfg);
}

// ---------------------------------------------------------------- diagnostics

inline double segment_accuracy(const TclModel& m, const Matrix& x, const std::vector<int>& labels) {
  const Matrix z = m.head.logits(predict(m.net, x));
  std::size_t hit = 0;
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    Eigen::Index k;
    z.row(t).maxCoeff(&k);
    hit += k == labels[static_cast<std::size_t>(t)];
  }
  return static_cast<double>(hit) / static_cast<double>(z.rows());
}

/// Fraction of pairs classified correctly: positives z > 0, negatives z < 0.
inline double pair_accuracy(const PclModel& m, const Matrix& x, std::uint64_t seed) {
  auto rng = make_stream(seed, "eval-permutation");
  const auto p = make_pcl_pairs(x.rows(), rng);
  const Matrix h = predict(m.net, x);
  const auto n = static_cast<Eigen::Index>(p.current.size());
  const Matrix hx = detail::gather_rows(h, p.current);
  const Vector zp = m.head.scores(hx, detail::gather_rows(h, p.lagged));
  const Vector zn = m.head.scores(hx, detail::gather_rows(h, p.negative_lagged));
  const double hits = static_cast<double>((zp.array() > 0.0).count() + (zn.array() < 0.0).count());
  return hits / static_cast<double>(2 * n);
}

inline json tcl_model_to_json(const TclModel& m) {
  return {{"kind", "tcl_model"},
          {"network", network_to_json(m.net)},
          {"head", {{"weight", matrix_to_json(m.head.weight)}, {"bias", vector_to_json(m.head.bias)}}}};
}

inline json pcl_model_to_json(const PclModel& m) {
  const auto& h = m.head;
  return {{"kind", "pcl_model"},
          {"network", network_to_json(m.net)},
          {"head",
           {{"a1", vector_to_json(h.a1)}, {"a2", vector_to_json(h.a2)}, {"b", vector_to_json(h.b)},
            {"abar", vector_to_json(h.abar)}, {"bbar", vector_to_json(h.bbar)}, {"c", h.c[0]}}}};
}

}  // namespace rnica
