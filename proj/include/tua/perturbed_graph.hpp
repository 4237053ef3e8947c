#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tua/error.hpp"
#include "tua/graph.hpp"
#include "tua/matrix.hpp"
#include "tua/normalize.hpp"

namespace tua {

/// Position of one bit in the fake-node feature block: fake row i, feature j.
struct FeaturePosition {
  std::size_t row = 0;
  std::size_t col = 0;

  auto operator<=>(const FeaturePosition&) const = default;
};

/// Feature rows of X' = [X; X_Fake] without materializing the stacked matrix.
class StackedFeatures {
 public:
  StackedFeatures(const SparseRows& base, const SparseRows& fake) : base_(&base), fake_(&fake) {}

  std::size_t num_rows() const noexcept { return base_->num_rows() + fake_->num_rows(); }
  std::size_t num_cols() const noexcept { return base_->num_cols(); }
  SparseRowRef row(std::size_t r) const noexcept {
    return r < base_->num_rows() ? base_->row(r) : fake_->row(r - base_->num_rows());
  }

 private:
  const SparseRows* base_;
  const SparseRows* fake_;
};

/// A base graph extended with N_Fake injected nodes hanging off the attack nodes, the
/// fake feature block, and at most one victim wired to every attack node.
///
/// Indices: original nodes occupy [0, N); fake node t of attack node k (k-th entry of
/// attack_nodes) is N + k * fake_per_attack + t. The fake-fake block is always empty.
class PerturbedGraph {
 public:
  PerturbedGraph(std::shared_ptr<const Graph> base, std::vector<NodeId> attack_nodes,
                 std::size_t fake_per_attack)
      : base_(std::move(base)), attack_nodes_(std::move(attack_nodes)),
        fake_per_attack_(fake_per_attack) {
    if (!base_) throw ValidationError("PerturbedGraph: null base graph");
    if (attack_nodes_.empty()) throw ConfigError("PerturbedGraph: no attack nodes");
    if (fake_per_attack_ == 0) throw ConfigError("PerturbedGraph: fake_per_attack must be >= 1");
    const std::size_t n = base_->num_nodes();
    for (NodeId a : attack_nodes_)
      if (a >= n) throw StructuralError("PerturbedGraph: attack node " + std::to_string(a) +
                                        " out of range");
    std::vector<NodeId> sorted = attack_nodes_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ConfigError("PerturbedGraph: duplicate attack node");
    target_class_ = base_->label(attack_nodes_.front());
    for (NodeId a : attack_nodes_)
      if (base_->label(a) != target_class_)
        throw ConfigError("PerturbedGraph: attack nodes must share one label (node " +
                          std::to_string(a) + " has label " + std::to_string(base_->label(a)) +
                          ", expected " + std::to_string(target_class_) + ")");
    bits_.assign(num_fake() * base_->num_features(), 0);
    rebuild_fake_rows();
  }

  const Graph& base() const noexcept { return *base_; }
  const std::shared_ptr<const Graph>& base_ptr() const noexcept { return base_; }

  std::span<const NodeId> attack_nodes() const noexcept { return attack_nodes_; }
  ClassId target_class() const noexcept { return target_class_; }
  std::size_t fake_per_attack() const noexcept { return fake_per_attack_; }
  std::size_t num_fake() const noexcept { return attack_nodes_.size() * fake_per_attack_; }
  NodeId fake_begin() const noexcept { return base_->num_nodes(); }
  std::size_t total_nodes() const noexcept { return base_->num_nodes() + num_fake(); }
  bool is_fake(NodeId u) const noexcept { return u >= fake_begin() && u < total_nodes(); }

  bool is_attack_node(NodeId u) const noexcept { return attack_position(u).has_value(); }

  /// Attack node a fake node hangs off.
  NodeId attack_of_fake(NodeId fake) const noexcept {
    return attack_nodes_[(fake - fake_begin()) / fake_per_attack_];
  }

  /// E as (attack node, fake node) pairs, ordered by fake index.
  std::vector<Edge> fake_edges() const {
    std::vector<Edge> out;
    out.reserve(num_fake());
    for (std::size_t i = 0; i < num_fake(); ++i)
      out.push_back(Edge{attack_of_fake(fake_begin() + i), fake_begin() + i});
    return out;
  }

  // ---- fake feature block ----

  bool fake_bit(std::size_t row, std::size_t col) const {
    check_position(row, col);
    return bits_[row * base_->num_features() + col] != 0;
  }

  void set_fake_bit(std::size_t row, std::size_t col) {
    check_position(row, col);
    bits_[row * base_->num_features() + col] = 1;
    rebuild_fake_rows();
  }

  /// Row-major 0/1 mask of the fake block (N_Fake x d).
  std::span<const std::uint8_t> fake_bits() const noexcept { return bits_; }

  std::size_t num_fake_bits_set() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  std::vector<FeaturePosition> fake_bit_positions() const {
    std::vector<FeaturePosition> out;
    const std::size_t d = base_->num_features();
    for (std::size_t k = 0; k < bits_.size(); ++k)
      if (bits_[k]) out.push_back({k / d, k % d});
    return out;
  }

  const SparseRows& fake_features() const noexcept { return fake_rows_; }

  Matrix fake_features_dense() const { return fake_rows_.to_dense(); }

  /// X' = [X; X_Fake].
  StackedFeatures features() const noexcept {
    return StackedFeatures(base_->features(), fake_rows_);
  }

  // ---- victim link ----

  std::optional<NodeId> victim() const noexcept { return victim_; }

  /// Edges added by the current victim link (pairs already present in the base graph are
  /// not duplicated).
  std::span<const Edge> victim_edges() const noexcept { return victim_edges_; }

  /// Wires victim to every attack node, replacing any previous victim link.
  void link_victim(NodeId victim) {
    if (victim >= base_->num_nodes())
      throw StructuralError("link_victim: victim " + std::to_string(victim) +
                            " is not an original node");
    if (is_attack_node(victim))
      throw ValidationError("link_victim: victim " + std::to_string(victim) +
                            " is an attack node");
    unlink_victim();
    victim_ = victim;
    for (NodeId a : attack_nodes_)
      if (!base_->has_edge(victim, a)) victim_edges_.push_back(Edge::canonical(victim, a));
    std::sort(victim_edges_.begin(), victim_edges_.end());
  }

  void unlink_victim() noexcept {
    victim_.reset();
    victim_edges_.clear();
  }

  // ---- assembled topology of A' (plus the victim link) ----

  /// Calls fn(w) for each neighbor w of u in the assembled graph, excluding u itself.
  template <typename Fn>
  void for_each_neighbor(NodeId u, Fn&& fn) const {
    if (is_fake(u)) {
      fn(attack_of_fake(u));
      return;
    }
    for (NodeId w : base_->neighbors(u)) fn(w);
    if (const auto pos = attack_position(u)) {
      const NodeId first = fake_begin() + *pos * fake_per_attack_;
      for (std::size_t t = 0; t < fake_per_attack_; ++t) fn(first + t);
      if (victim_ && !base_->has_edge(u, *victim_)) fn(*victim_);
    } else if (victim_ && u == *victim_) {
      for (NodeId a : attack_nodes_)
        if (!base_->has_edge(u, a)) fn(a);
    }
  }

  /// Degree in the assembled graph, without the self-loop.
  std::size_t degree(NodeId u) const {
    if (is_fake(u)) return 1;
    std::size_t deg = base_->degree(u);
    if (const auto pos = attack_position(u)) {
      deg += fake_per_attack_;
      if (victim_ && !base_->has_edge(u, *victim_)) ++deg;
    } else if (victim_ && u == *victim_) {
      deg += victim_edges_.size();
    }
    return deg;
  }

  bool has_edge(NodeId a, NodeId b) const {
    bool found = false;
    for_each_neighbor(a, [&](NodeId w) { found = found || w == b; });
    return found;
  }

  /// Full edge set of the assembled graph: base edges, E, and victim edges, canonical
  /// and sorted.
  std::vector<Edge> total_edges() const {
    std::vector<Edge> out(base_->edges().begin(), base_->edges().end());
    const auto fe = fake_edges();
    out.insert(out.end(), fe.begin(), fe.end());
    out.insert(out.end(), victim_edges_.begin(), victim_edges_.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Dense A' in the block layout [[A, E], [E^T, P]], including any victim link.
  Matrix total_adjacency_dense() const {
    Matrix out(total_nodes(), total_nodes());
    for (const Edge& e : total_edges()) {
      out(e.u, e.v) = 1.0;
      out(e.v, e.u) = 1.0;
    }
    return out;
  }

  /// Normalized adjacency of the assembled graph, recomputed from scratch.
  NormalizedAdjacency normalized() const { return normalize(total_nodes(), total_edges()); }

 private:
  std::optional<std::size_t> attack_position(NodeId u) const noexcept {
    for (std::size_t k = 0; k < attack_nodes_.size(); ++k)
      if (attack_nodes_[k] == u) return k;
    return std::nullopt;
  }

  void check_position(std::size_t row, std::size_t col) const {
    if (row >= num_fake() || col >= base_->num_features())
      throw StructuralError("PerturbedGraph: fake feature position (" + std::to_string(row) +
                            ", " + std::to_string(col) + ") out of range");
  }

  void rebuild_fake_rows() {
    const std::size_t d = base_->num_features();
    SparseRows rows(d);
    std::vector<std::size_t> cols;
    std::vector<double> ones;
    for (std::size_t i = 0; i < num_fake(); ++i) {
      cols.clear();
      for (std::size_t j = 0; j < d; ++j)
        if (bits_[i * d + j]) cols.push_back(j);
      ones.assign(cols.size(), 1.0);
      rows.append_row(cols, ones);
    }
    fake_rows_ = std::move(rows);
  }

  std::shared_ptr<const Graph> base_;
  std::vector<NodeId> attack_nodes_;
  std::size_t fake_per_attack_ = 0;
  ClassId target_class_ = 0;
  std::vector<std::uint8_t> bits_;
  SparseRows fake_rows_;
  std::optional<NodeId> victim_;
  std::vector<Edge> victim_edges_;
};

/// Appends fake_per_attack zero-feature fake nodes to each attack node.
inline PerturbedGraph inject_fake_nodes(std::shared_ptr<const Graph> graph,
                                        std::span<const NodeId> attack_nodes,
                                        std::size_t fake_per_attack) {
  return PerturbedGraph(std::move(graph), std::vector<NodeId>(attack_nodes.begin(), attack_nodes.end()),
                        fake_per_attack);
}

inline PerturbedGraph inject_fake_nodes(const Graph& graph, std::span<const NodeId> attack_nodes,
                                        std::size_t fake_per_attack) {
  return inject_fake_nodes(std::make_shared<const Graph>(graph), attack_nodes, fake_per_attack);
}

/// Copy of pg with victim wired to all attack nodes (previous victim link removed).
inline PerturbedGraph link_victim(PerturbedGraph pg, NodeId victim) {
  pg.link_victim(victim);
  return pg;
}

inline PerturbedGraph unlink_victim(PerturbedGraph pg) {
  pg.unlink_victim();
  return pg;
}

}  // namespace tua
