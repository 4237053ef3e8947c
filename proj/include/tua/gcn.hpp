#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tua/error.hpp"
#include "tua/graph.hpp"
#include "tua/matrix.hpp"
#include "tua/normalize.hpp"
#include "tua/rng.hpp"

namespace tua {

/// Anything that exposes sparse feature rows: SparseRows, StackedFeatures, local views.
template <typename T>
concept FeatureSource = requires(const T& x, std::size_t r) {
  { x.num_rows() } -> std::convertible_to<std::size_t>;
  { x.num_cols() } -> std::convertible_to<std::size_t>;
  { x.row(r) } -> std::same_as<SparseRowRef>;
};

/// Weights of the two-layer GCN softmax(A relu(A X W0) W1).
struct GcnParams {
  Matrix w0;  // d x h
  Matrix w1;  // h x C

  std::size_t num_features() const noexcept { return w0.rows(); }
  std::size_t hidden_dim() const noexcept { return w0.cols(); }
  std::size_t num_classes() const noexcept { return w1.cols(); }

  void validate() const {
    if (w1.rows() != w0.cols())
      throw ValidationError("GcnParams: w0 is " + std::to_string(w0.rows()) + "x" +
                            std::to_string(w0.cols()) + " but w1 has " + std::to_string(w1.rows()) +
                            " rows");
    if (!w0.all_finite() || !w1.all_finite())
      throw ValidationError("GcnParams: non-finite weight");
  }

  void validate_for(std::size_t num_features_expected, std::size_t num_classes_expected) const {
    validate();
    if (num_features() != num_features_expected || num_classes() != num_classes_expected)
      throw ValidationError("GcnParams: model expects d=" + std::to_string(num_features()) +
                            ", C=" + std::to_string(num_classes()) + " but data has d=" +
                            std::to_string(num_features_expected) + ", C=" +
                            std::to_string(num_classes_expected));
  }

  bool operator==(const GcnParams&) const = default;
};

/// Glorot-uniform initialization of both layers.
inline GcnParams glorot_init(std::size_t num_features, std::size_t hidden_dim,
                             std::size_t num_classes, Rng& rng) {
  GcnParams p{Matrix(num_features, hidden_dim), Matrix(hidden_dim, num_classes)};
  auto fill = [&rng](Matrix& m) {
    const double range = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (double& x : m.data()) x = rng.uniform(-range, range);
  };
  fill(p.w0);
  fill(p.w1);
  return p;
}

/// Row-stochastic class probabilities, one row per node.
class ProbMatrix {
 public:
  ProbMatrix() = default;
  explicit ProbMatrix(Matrix values) : values_(std::move(values)) {}

  std::size_t num_nodes() const noexcept { return values_.rows(); }
  std::size_t num_classes() const noexcept { return values_.cols(); }
  std::span<const double> row(NodeId v) const noexcept { return values_.row(v); }
  double operator()(NodeId v, ClassId c) const noexcept { return values_(v, c); }
  const Matrix& values() const noexcept { return values_; }

 private:
  Matrix values_;
};

/// Index of the largest entry; ties go to the lowest index.
inline ClassId argmax(std::span<const double> row) noexcept {
  ClassId best = 0;
  for (ClassId c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

inline void softmax_inplace(std::span<double> row) noexcept {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& x : row) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : row) x /= sum;
}

/// The network reads each feature row as x / max(sum(x), 1): binary rows are
/// divided by their number of set bits, empty rows stay zero.
inline double row_mass(SparseRowRef xr) noexcept {
  double s = 0.0;
  for (double v : xr.values) s += v;
  return s;
}

inline double input_row_scale(SparseRowRef xr) noexcept { return 1.0 / std::max(row_mass(xr), 1.0); }

/// Rows of x after the input scaling.
template <FeatureSource X>
SparseRows normalize_input_rows(const X& x) {
  SparseRows out(x.num_cols());
  std::vector<double> vals;
  for (std::size_t r = 0; r < x.num_rows(); ++r) {
    const SparseRowRef xr = x.row(r);
    const double scale = input_row_scale(xr);
    vals.assign(xr.values.begin(), xr.values.end());
    for (double& v : vals) v *= scale;
    out.append_row(xr.cols, vals);
  }
  return out;
}

enum class InputScaling { apply, already_applied };

namespace detail {

/// X~ W for sparse X, X~ the scaled input rows.
template <FeatureSource X>
Matrix feature_product(const X& x, const Matrix& w, InputScaling scaling = InputScaling::apply) {
  Matrix out(x.num_rows(), w.cols());
  for (std::size_t r = 0; r < x.num_rows(); ++r) {
    const SparseRowRef xr = x.row(r);
    const double scale = scaling == InputScaling::apply ? input_row_scale(xr) : 1.0;
    auto dst = out.row(r);
    for (std::size_t k = 0; k < xr.cols.size(); ++k) {
      const double xv = xr.values[k] * scale;
      const auto wr = w.row(xr.cols[k]);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += xv * wr[c];
    }
  }
  return out;
}

/// A M for the normalized adjacency A (symmetric, so also A^T M).
inline Matrix propagate(const NormalizedAdjacency& adj, const Matrix& m) {
  Matrix out(adj.size(), m.cols());
  for (NodeId u = 0; u < adj.size(); ++u) {
    const auto cols = adj.row_cols(u);
    const auto vals = adj.row_values(u);
    auto dst = out.row(u);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto src = m.row(cols[k]);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += vals[k] * src[c];
    }
  }
  return out;
}

/// Dense A B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto br = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += aik * br[j];
    }
  }
  return out;
}

/// A^T B.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto ar = a.row(k);
    const auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      if (ar[i] == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += ar[i] * br[j];
    }
  }
  return out;
}

/// A B^T.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

/// X~^T M for sparse X.
template <FeatureSource X>
Matrix feature_product_tn(const X& x, const Matrix& m, InputScaling scaling = InputScaling::apply) {
  Matrix out(x.num_cols(), m.cols());
  for (std::size_t r = 0; r < x.num_rows(); ++r) {
    const SparseRowRef xr = x.row(r);
    const double scale = scaling == InputScaling::apply ? input_row_scale(xr) : 1.0;
    const auto mr = m.row(r);
    for (std::size_t k = 0; k < xr.cols.size(); ++k) {
      auto dst = out.row(xr.cols[k]);
      const double xv = xr.values[k] * scale;
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += xv * mr[c];
    }
  }
  return out;
}

template <FeatureSource X>
void check_dims(const NormalizedAdjacency& adj, const X& x, const GcnParams& params) {
  params.validate();
  if (x.num_rows() != adj.size())
    throw ValidationError("GCN: adjacency has " + std::to_string(adj.size()) +
                          " nodes but features have " + std::to_string(x.num_rows()) + " rows");
  if (x.num_cols() != params.num_features())
    throw ValidationError("GCN: features have " + std::to_string(x.num_cols()) +
                          " columns but w0 expects " + std::to_string(params.num_features()));
}

}  // namespace detail

/// Every intermediate of one deterministic forward pass.
struct ForwardState {
  Matrix xw;      // X W0
  Matrix pre1;    // A X W0
  Matrix hidden;  // relu(pre1)
  Matrix hw;      // hidden W1
  Matrix logits;  // A hidden W1
  ProbMatrix probs;
};

template <FeatureSource X>
ForwardState forward_state(const NormalizedAdjacency& adj, const X& x, const GcnParams& params) {
  detail::check_dims(adj, x, params);
  ForwardState s;
  s.xw = detail::feature_product(x, params.w0);
  s.pre1 = detail::propagate(adj, s.xw);
  s.hidden = s.pre1;
  for (double& h : s.hidden.data()) h = std::max(h, 0.0);
  s.hw = detail::matmul(s.hidden, params.w1);
  s.logits = detail::propagate(adj, s.hw);
  Matrix probs = s.logits;
  for (std::size_t r = 0; r < probs.rows(); ++r) softmax_inplace(probs.row(r));
  s.probs = ProbMatrix(std::move(probs));
  return s;
}

/// softmax(A relu(A X W0) W1). No dropout.
template <FeatureSource X>
ProbMatrix forward(const NormalizedAdjacency& adj, const X& x, const GcnParams& params) {
  return forward_state(adj, x, params).probs;
}

inline ProbMatrix forward(const NormalizedAdjacency& adj, const Matrix& x,
                          const GcnParams& params) {
  return forward(adj, SparseRows::from_dense(x), params);
}

template <FeatureSource X>
ClassId predict(const NormalizedAdjacency& adj, const X& x, const GcnParams& params, NodeId node) {
  if (node >= adj.size())
    throw StructuralError("predict: node " + std::to_string(node) + " out of range");
  return argmax(forward(adj, x, params).row(node));
}

inline double accuracy(const ProbMatrix& probs, std::span<const ClassId> labels,
                       std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hits = 0;
  for (NodeId v : nodes) hits += argmax(probs.row(v)) == labels[v] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

// ---------------------------------------------------------------------------
// Targeted objective: F = p[v, target] - p[v, current], current = argmax of row v.
// ---------------------------------------------------------------------------

struct ObjectiveValue {
  double value = 0.0;
  ClassId current_class = 0;
};

inline ObjectiveValue targeted_objective(std::span<const double> probs_row, ClassId target) {
  if (target >= probs_row.size())
    throw ValidationError("targeted_objective: class " + std::to_string(target) + " out of range");
  const ClassId current = argmax(probs_row);
  return {probs_row[target] - probs_row[current], current};
}

struct ObjectiveGradient {
  double value = 0.0;
  ClassId current_class = 0;
  Matrix grad;  // one row per requested feature row
};

/// Gradient of F(v) w.r.t. the feature rows listed in `rows`, treating features as
/// continuous. The forward pass covers the whole supplied graph; backpropagation only
/// visits the closed 2-hop neighborhood of v.
template <FeatureSource X>
ObjectiveGradient objective_gradient(const NormalizedAdjacency& adj, const X& x,
                                     const GcnParams& params, NodeId v, ClassId target,
                                     std::span<const NodeId> rows) {
  if (v >= adj.size())
    throw StructuralError("objective_gradient: node " + std::to_string(v) + " out of range");
  const ForwardState s = forward_state(adj, x, params);
  const auto p = s.probs.row(v);
  const ObjectiveValue obj = targeted_objective(p, target);

  const std::size_t classes = params.num_classes();
  const std::size_t hidden = params.hidden_dim();
  const std::size_t d = params.num_features();
  ObjectiveGradient out{obj.value, obj.current_class, Matrix(rows.size(), d)};
  if (obj.current_class == target) return out;  // F is identically zero here

  // dF/dlogits[v]
  const ClassId c = obj.current_class;
  std::vector<double> g(classes);
  for (ClassId k = 0; k < classes; ++k)
    g[k] = p[target] * ((k == target ? 1.0 : 0.0) - p[k]) - p[c] * ((k == c ? 1.0 : 0.0) - p[k]);

  // W1 g
  std::vector<double> w1g(hidden, 0.0);
  for (std::size_t r = 0; r < hidden; ++r) {
    const auto w1r = params.w1.row(r);
    for (ClassId k = 0; k < classes; ++k) w1g[r] += w1r[k] * g[k];
  }

  std::unordered_map<NodeId, std::size_t> slot;
  for (std::size_t i = 0; i < rows.size(); ++i) slot.emplace(rows[i], i);

  // dF/dpre1[u] = A[v,u] * (W1 g) * relu'(pre1[u]) for u in N[v]; then
  // dF/d(XW0)[w] = sum_u A[u,w] dF/dpre1[u].
  Matrix t(rows.size(), hidden);
  std::vector<double> delta(hidden);
  const auto vcols = adj.row_cols(v);
  const auto vvals = adj.row_values(v);
  for (std::size_t a = 0; a < vcols.size(); ++a) {
    const NodeId u = vcols[a];
    const auto pre = s.pre1.row(u);
    bool any = false;
    for (std::size_t r = 0; r < hidden; ++r) {
      delta[r] = pre[r] > 0.0 ? vvals[a] * w1g[r] : 0.0;
      any = any || delta[r] != 0.0;
    }
    if (!any) continue;
    const auto ucols = adj.row_cols(u);
    const auto uvals = adj.row_values(u);
    for (std::size_t b = 0; b < ucols.size(); ++b) {
      const auto it = slot.find(ucols[b]);
      if (it == slot.end()) continue;
      auto dst = t.row(it->second);
      for (std::size_t r = 0; r < hidden; ++r) dst[r] += uvals[b] * delta[r];
    }
  }
  // dF/dX~[w] = dF/d(X~W0)[w] W0^T, then through the row scaling. With mass s >= 1,
  // x~ = x / s and dF/dx_k = (g_k - <g, x> / s) / s. At s = 1 this is the derivative in
  // the direction of growing mass, the one a 0 -> 1 flip moves along.
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ti = t.row(i);
    auto dst = out.grad.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const auto w0j = params.w0.row(j);
      double sum = 0.0;
      for (std::size_t r = 0; r < hidden; ++r) sum += w0j[r] * ti[r];
      dst[j] = sum;
    }
    const SparseRowRef xr = x.row(rows[i]);
    const double mass = row_mass(xr);
    if (mass >= 1.0) {
      double gx = 0.0;
      for (std::size_t k = 0; k < xr.cols.size(); ++k) gx += dst[xr.cols[k]] * xr.values[k];
      for (std::size_t j = 0; j < d; ++j) dst[j] = (dst[j] - gx / mass) / mass;
    }
  }
  return out;
}

/// Gradient of F(v) w.r.t. the contiguous fake block [fake_begin, fake_begin + num_fake).
template <FeatureSource X>
Matrix objective_grad_wrt_fake(const NormalizedAdjacency& adj, const X& x, const GcnParams& params,
                               NodeId v, ClassId target, NodeId fake_begin, std::size_t num_fake) {
  if (fake_begin + num_fake > adj.size())
    throw StructuralError("objective_grad_wrt_fake: fake rows out of range");
  std::vector<NodeId> rows(num_fake);
  for (std::size_t i = 0; i < num_fake; ++i) rows[i] = fake_begin + i;
  return objective_gradient(adj, x, params, v, target, rows).grad;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t hidden_dim = 16;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;  // first layer only
  double dropout_rate = 0.5;
  std::size_t epochs = 200;
  std::uint64_t seed = 42;
  std::vector<NodeId> train_nodes;
  std::vector<NodeId> val_nodes;
  std::vector<NodeId> test_nodes;

  void validate(std::size_t num_nodes) const {
    if (train_nodes.empty()) throw ConfigError("TrainConfig: empty train mask");
    if (hidden_dim == 0) throw ConfigError("TrainConfig: hidden_dim must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("TrainConfig: dropout_rate must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
    std::vector<std::uint8_t> owner(num_nodes, 0);
    const std::vector<NodeId>* masks[] = {&train_nodes, &val_nodes, &test_nodes};
    for (std::uint8_t m = 0; m < 3; ++m) {
      for (NodeId v : *masks[m]) {
        if (v >= num_nodes) throw ConfigError("TrainConfig: mask node out of range");
        if (owner[v] != 0) throw ConfigError("TrainConfig: masks overlap at node " + std::to_string(v));
        owner[v] = static_cast<std::uint8_t>(m + 1);
      }
    }
  }
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix d_w0;
  Matrix d_w1;
};

namespace detail {

/// Masked mean cross-entropy + (weight_decay / 2) ||W0||^2 and its parameter gradient.
/// hidden_keep (same shape as the hidden layer, entries 0 or 1/(1-p)) implements hidden
/// dropout when non-empty; input dropout is applied by the caller on x.
template <FeatureSource X>
LossAndGrad loss_and_grad_impl(const NormalizedAdjacency& adj, const X& x, const GcnParams& params,
                               std::span<const ClassId> labels, std::span<const NodeId> nodes,
                               double weight_decay, const Matrix* hidden_keep,
                               InputScaling scaling = InputScaling::apply) {
  detail::check_dims(adj, x, params);
  const Matrix xw = feature_product(x, params.w0, scaling);
  const Matrix pre1 = propagate(adj, xw);
  Matrix hidden = pre1;
  for (double& h : hidden.data()) h = std::max(h, 0.0);
  if (hidden_keep) {
    for (std::size_t k = 0; k < hidden.size(); ++k) hidden.data()[k] *= hidden_keep->data()[k];
  }
  const Matrix hw = matmul(hidden, params.w1);
  const Matrix logits = propagate(adj, hw);

  const std::size_t classes = params.num_classes();
  const double scale = 1.0 / static_cast<double>(nodes.size());
  Matrix d_logits(logits.rows(), classes);
  double loss = 0.0;
  std::vector<double> prob(classes);
  for (NodeId v : nodes) {
    const auto z = logits.row(v);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (ClassId k = 0; k < classes; ++k) sum += std::exp(z[k] - mx);
    const double log_sum = std::log(sum) + mx;
    loss -= (z[labels[v]] - log_sum) * scale;
    auto dz = d_logits.row(v);
    for (ClassId k = 0; k < classes; ++k) {
      prob[k] = std::exp(z[k] - log_sum);
      dz[k] += scale * (prob[k] - (k == labels[v] ? 1.0 : 0.0));
    }
  }
  double sq = 0.0;
  for (double w : params.w0.data()) sq += w * w;
  loss += 0.5 * weight_decay * sq;

  const Matrix d_hw = propagate(adj, d_logits);
  LossAndGrad out;
  out.loss = loss;
  out.d_w1 = matmul_tn(hidden, d_hw);
  Matrix d_pre1 = matmul_nt(d_hw, params.w1);
  for (std::size_t k = 0; k < d_pre1.size(); ++k) {
    double keep = hidden_keep ? hidden_keep->data()[k] : 1.0;
    d_pre1.data()[k] *= pre1.data()[k] > 0.0 ? keep : 0.0;
  }
  const Matrix d_xw = propagate(adj, d_pre1);
  out.d_w0 = feature_product_tn(x, d_xw, scaling);
  for (std::size_t k = 0; k < out.d_w0.size(); ++k)
    out.d_w0.data()[k] += weight_decay * params.w0.data()[k];
  return out;
}

}  // namespace detail

/// Deterministic (dropout-free) training loss and its gradient w.r.t. W0 and W1.
template <FeatureSource X>
LossAndGrad training_loss_and_grad(const NormalizedAdjacency& adj, const X& x,
                                   const GcnParams& params, std::span<const ClassId> labels,
                                   std::span<const NodeId> nodes, double weight_decay) {
  if (nodes.empty()) throw ConfigError("training_loss_and_grad: empty node set");
  return detail::loss_and_grad_impl(adj, x, params, labels, nodes, weight_decay, nullptr);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainOutcome {
  GcnParams params;
  std::size_t best_epoch = 0;  // 0 = initialization
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<EpochRecord> history;
};

namespace detail {

struct AdamState {
  Matrix m, v;
  explicit AdamState(const Matrix& like) : m(like.rows(), like.cols()), v(like.rows(), like.cols()) {}

  void step(Matrix& w, const Matrix& g, double lr, std::size_t t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.data()[k];
      m.data()[k] = beta1 * m.data()[k] + (1.0 - beta1) * gk;
      v.data()[k] = beta2 * v.data()[k] + (1.0 - beta2) * gk * gk;
      const double mhat = m.data()[k] / c1;
      const double vhat = v.data()[k] / c2;
      w.data()[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

inline SparseRows drop_features(const SparseRows& x, double rate, Rng& rng) {
  SparseRows out(x.num_cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  for (std::size_t r = 0; r < x.num_rows(); ++r) {
    const SparseRowRef xr = x.row(r);
    cols.clear();
    vals.clear();
    for (std::size_t k = 0; k < xr.cols.size(); ++k) {
      if (rng.bernoulli(rate)) continue;
      cols.push_back(xr.cols[k]);
      vals.push_back(xr.values[k] * keep_scale);
    }
    out.append_row(cols, vals);
  }
  return out;
}

}  // namespace detail

/// Full-batch training with Adam, dropout on both layer inputs and L2 on W0. Keeps the
/// parameters with the lowest validation loss (the last epoch when no validation nodes
/// are given). Bit-reproducible for a fixed seed.
inline TrainOutcome train_model(const Graph& graph, const TrainConfig& cfg) {
  cfg.validate(graph.num_nodes());
  const NormalizedAdjacency adj = normalize(graph);
  // Scaled once up front; dropout then acts on the scaled rows.
  const SparseRows x = normalize_input_rows(graph.features());
  const auto labels = graph.labels();

  Rng rng(cfg.seed);
  TrainOutcome out;
  out.params = glorot_init(graph.num_features(), cfg.hidden_dim, graph.num_classes(), rng);

  GcnParams current = out.params;
  detail::AdamState adam0(current.w0), adam1(current.w1);
  double best_val = std::numeric_limits<double>::infinity();
  const bool has_val = !cfg.val_nodes.empty();

  Matrix keep(graph.num_nodes(), cfg.hidden_dim);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossAndGrad lg;
    if (cfg.dropout_rate > 0.0) {
      const SparseRows dropped = detail::drop_features(x, cfg.dropout_rate, rng);
      const double keep_scale = 1.0 / (1.0 - cfg.dropout_rate);
      for (double& k : keep.data()) k = rng.bernoulli(cfg.dropout_rate) ? 0.0 : keep_scale;
      lg = detail::loss_and_grad_impl(adj, dropped, current, labels, cfg.train_nodes,
                                      cfg.weight_decay, &keep, InputScaling::already_applied);
    } else {
      lg = detail::loss_and_grad_impl(adj, x, current, labels, cfg.train_nodes, cfg.weight_decay,
                                      nullptr, InputScaling::already_applied);
    }
    adam0.step(current.w0, lg.d_w0, cfg.learning_rate, epoch);
    adam1.step(current.w1, lg.d_w1, cfg.learning_rate, epoch);

    EpochRecord rec{epoch, lg.loss, 0.0, 0.0};
    if (has_val) {
      rec.val_loss = detail::loss_and_grad_impl(adj, x, current, labels, cfg.val_nodes, 0.0, nullptr,
                                                InputScaling::already_applied)
                         .loss;
      rec.val_accuracy = accuracy(forward(adj, graph.features(), current), labels, cfg.val_nodes);
      if (rec.val_loss < best_val) {
        best_val = rec.val_loss;
        out.params = current;
        out.best_epoch = epoch;
      }
    } else {
      out.params = current;
      out.best_epoch = epoch;
    }
    out.history.push_back(rec);
  }

  const ProbMatrix probs = forward(adj, graph.features(), out.params);
  out.train_accuracy = accuracy(probs, labels, cfg.train_nodes);
  out.val_accuracy = accuracy(probs, labels, cfg.val_nodes);
  out.test_accuracy = accuracy(probs, labels, cfg.test_nodes);
  return out;
}

inline GcnParams train(const Graph& graph, const TrainConfig& cfg) {
  return train_model(graph, cfg).params;
}

}  // namespace tua
