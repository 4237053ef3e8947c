#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tua/error.hpp"
#include "tua/gcn.hpp"
#include "tua/normalize.hpp"
#include "tua/perturbed_graph.hpp"

namespace tua {

/// Number of propagation layers in the model; a center's output is fixed by its
/// closed neighborhood of this radius.
inline constexpr std::size_t kGcnLayers = 2;

/// Induced neighborhood of a set of centers in an assembled (possibly victim-linked)
/// graph. Normalization inside the view uses the full-graph degrees of its nodes, so
/// center outputs and gradients are exact.
class SubgraphView {
 public:
  SubgraphView(std::vector<NodeId> nodes, std::vector<std::size_t> global_degrees,
               std::vector<Edge> local_edges, std::vector<NodeId> centers, std::size_t hops,
               NodeId fake_begin, std::size_t num_fake)
      : nodes_(std::move(nodes)), global_degrees_(std::move(global_degrees)),
        local_edges_(std::move(local_edges)), centers_(std::move(centers)), hops_(hops),
        fake_begin_(fake_begin), num_fake_(num_fake) {
    build_adjacency();
  }

  /// Global ids of the included nodes, ascending; position = local index.
  std::span<const NodeId> nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::span<const NodeId> centers() const noexcept { return centers_; }
  std::size_t hops() const noexcept { return hops_; }
  std::span<const Edge> local_edges() const noexcept { return local_edges_; }

  /// Closed degree (neighbors + self-loop) in the full graph, by local index.
  std::span<const std::size_t> global_degrees() const noexcept { return global_degrees_; }

  NodeId global_of(std::size_t local) const noexcept { return nodes_[local]; }

  std::optional<std::size_t> local_of(NodeId global) const noexcept {
    const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), global);
    if (it == nodes_.end() || *it != global) return std::nullopt;
    return static_cast<std::size_t>(it - nodes_.begin());
  }

  bool contains(NodeId global) const noexcept { return local_of(global).has_value(); }

  bool is_center(NodeId global) const noexcept {
    return std::find(centers_.begin(), centers_.end(), global) != centers_.end();
  }

  NodeId fake_begin() const noexcept { return fake_begin_; }
  std::size_t num_fake() const noexcept { return num_fake_; }

  /// Local normalized adjacency built with global degrees.
  const NormalizedAdjacency& adjacency() const noexcept { return adjacency_; }

 private:
  void build_adjacency() {
    const std::size_t n = nodes_.size();
    std::vector<std::size_t> offsets(n + 1, 0);
    for (const Edge& e : local_edges_) {
      ++offsets[e.u + 1];
      ++offsets[e.v + 1];
    }
    for (std::size_t u = 0; u < n; ++u) offsets[u + 1] += offsets[u] + 1;
    std::vector<NodeId> cols(offsets[n]);
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t u = 0; u < n; ++u) cols[cursor[u]++] = u;
    for (const Edge& e : local_edges_) {
      cols[cursor[e.u]++] = e.v;
      cols[cursor[e.v]++] = e.u;
    }
    std::vector<double> values(cols.size());
    for (std::size_t u = 0; u < n; ++u) {
      auto first = cols.begin() + static_cast<std::ptrdiff_t>(offsets[u]);
      auto last = cols.begin() + static_cast<std::ptrdiff_t>(offsets[u + 1]);
      std::sort(first, last);
      for (std::size_t k = offsets[u]; k < offsets[u + 1]; ++k)
        values[k] = normalized_weight(global_degrees_[u], global_degrees_[cols[k]]);
    }
    adjacency_ = NormalizedAdjacency(std::move(offsets), std::move(cols), std::move(values),
                                     global_degrees_);
  }

  std::vector<NodeId> nodes_;
  std::vector<std::size_t> global_degrees_;
  std::vector<Edge> local_edges_;
  std::vector<NodeId> centers_;
  std::size_t hops_ = kGcnLayers;
  NodeId fake_begin_ = 0;
  std::size_t num_fake_ = 0;
  NormalizedAdjacency adjacency_;
};

/// Feature rows of a global source, re-indexed to a view's local order.
template <FeatureSource X>
class LocalFeatures {
 public:
  LocalFeatures(const SubgraphView& view, const X& global) : view_(&view), global_(&global) {}

  std::size_t num_rows() const noexcept { return view_->size(); }
  std::size_t num_cols() const noexcept { return global_->num_cols(); }
  SparseRowRef row(std::size_t local) const noexcept { return global_->row(view_->global_of(local)); }

 private:
  const SubgraphView* view_;
  const X* global_;
};

namespace detail {

/// Builds a view over `nodes` (sorted, unique) of the assembled graph `pg`.
inline SubgraphView make_view(const PerturbedGraph& pg, std::vector<NodeId> nodes,
                              std::vector<NodeId> centers, std::size_t hops) {
  std::vector<std::size_t> degrees(nodes.size());
  std::vector<Edge> edges;
  auto local = [&nodes](NodeId g) -> std::optional<std::size_t> {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), g);
    if (it == nodes.end() || *it != g) return std::nullopt;
    return static_cast<std::size_t>(it - nodes.begin());
  };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    degrees[i] = pg.degree(nodes[i]) + 1;
    pg.for_each_neighbor(nodes[i], [&](NodeId w) {
      if (w <= nodes[i]) return;
      if (const auto j = local(w)) edges.push_back(Edge{i, *j});
    });
  }
  std::sort(edges.begin(), edges.end());
  return SubgraphView(std::move(nodes), std::move(degrees), std::move(edges), std::move(centers),
                      hops, pg.fake_begin(), pg.num_fake());
}

inline void check_hops(std::size_t k) {
  if (k < kGcnLayers)
    throw ConfigError("subgraph: k = " + std::to_string(k) + " is smaller than the " +
                      std::to_string(kGcnLayers) + "-layer receptive field");
}

}  // namespace detail

/// All nodes within k hops of any center in the assembled graph (victim link included),
/// every edge among them, and their full-graph degrees.
inline SubgraphView extract(const PerturbedGraph& pg, std::span<const NodeId> centers,
                            std::size_t k = kGcnLayers) {
  detail::check_hops(k);
  const std::size_t total = pg.total_nodes();
  std::vector<std::uint8_t> seen(total, 0);
  std::vector<NodeId> frontier;
  std::vector<NodeId> nodes;
  for (NodeId c : centers) {
    if (c >= total) throw StructuralError("extract: center " + std::to_string(c) + " out of range");
    if (!seen[c]) {
      seen[c] = 1;
      frontier.push_back(c);
      nodes.push_back(c);
    }
  }
  std::vector<NodeId> next;
  for (std::size_t hop = 0; hop < k && !frontier.empty(); ++hop) {
    next.clear();
    for (NodeId u : frontier) {
      pg.for_each_neighbor(u, [&](NodeId w) {
        if (seen[w]) return;
        seen[w] = 1;
        next.push_back(w);
        nodes.push_back(w);
      });
    }
    frontier.swap(next);
  }
  std::sort(nodes.begin(), nodes.end());
  return detail::make_view(pg, std::move(nodes), std::vector<NodeId>(centers.begin(), centers.end()),
                           k);
}

/// Builds 2-hop views around successive victims of one injected graph. The attack side
/// (attack nodes, their base neighbors and the fake nodes) is computed once; each victim
/// only adds its own base-graph 2-hop ball. Only topology is used, so feature bits set
/// after construction do not invalidate the builder. Not thread-safe.
class VictimSubgraphBuilder {
 public:
  explicit VictimSubgraphBuilder(PerturbedGraph pg) : pg_(std::move(pg)) {
    pg_.unlink_victim();
    std::vector<NodeId> ball;
    for (NodeId a : pg_.attack_nodes()) {
      ball.push_back(a);
      pg_.for_each_neighbor(a, [&](NodeId w) { ball.push_back(w); });
    }
    std::sort(ball.begin(), ball.end());
    ball.erase(std::unique(ball.begin(), ball.end()), ball.end());
    attack_ball_ = std::move(ball);
    mark_.assign(pg_.total_nodes(), 0);
  }

  const PerturbedGraph& graph() const noexcept { return pg_; }

  /// View of link_victim(pg, victim) centered on victim.
  SubgraphView build(NodeId victim) {
    pg_.link_victim(victim);
    const Graph& base = pg_.base();
    std::vector<NodeId> nodes = attack_ball_;
    for (NodeId u : attack_ball_) mark_[u] = 1;
    auto add = [&](NodeId u) {
      if (!mark_[u]) {
        mark_[u] = 1;
        nodes.push_back(u);
      }
    };
    add(victim);
    for (NodeId u : base.neighbors(victim)) {
      add(u);
      for (NodeId w : base.neighbors(u)) add(w);
    }
    for (NodeId u : nodes) mark_[u] = 0;
    std::sort(nodes.begin(), nodes.end());
    SubgraphView view = detail::make_view(pg_, std::move(nodes), {victim}, kGcnLayers);
    pg_.unlink_victim();
    return view;
  }

 private:
  PerturbedGraph pg_;
  std::vector<NodeId> attack_ball_;
  std::vector<std::uint8_t> mark_;
};

/// Output row of a center node, computed inside the view.
template <FeatureSource X>
std::vector<double> forward_on_subgraph(const SubgraphView& view, const X& features,
                                        const GcnParams& params, NodeId node) {
  if (!view.is_center(node))
    throw ValidationError("forward_on_subgraph: node " + std::to_string(node) +
                          " is not a center of the view");
  detail::check_hops(view.hops());
  const LocalFeatures<X> local(view, features);
  const ProbMatrix probs = forward(view.adjacency(), local, params);
  const auto row = probs.row(*view.local_of(node));
  return std::vector<double>(row.begin(), row.end());
}

/// Objective value and the gradient of F(v) w.r.t. every fake row (global fake order),
/// computed inside the view.
template <FeatureSource X>
ObjectiveGradient objective_gradient_on_subgraph(const SubgraphView& view, const X& features,
                                                 const GcnParams& params, NodeId v,
                                                 ClassId target) {
  if (!view.is_center(v))
    throw ValidationError("grad_on_subgraph: node " + std::to_string(v) +
                          " is not a center of the view");
  detail::check_hops(view.hops());
  std::vector<NodeId> rows(view.num_fake());
  for (std::size_t i = 0; i < view.num_fake(); ++i) {
    const auto local = view.local_of(view.fake_begin() + i);
    if (!local)
      throw StructuralError("grad_on_subgraph: fake node " + std::to_string(view.fake_begin() + i) +
                            " missing from the view");
    rows[i] = *local;
  }
  const LocalFeatures<X> local(view, features);
  return objective_gradient(view.adjacency(), local, params, *view.local_of(v), target, rows);
}

template <FeatureSource X>
Matrix grad_on_subgraph(const SubgraphView& view, const X& features, const GcnParams& params,
                        NodeId v, ClassId target) {
  return objective_gradient_on_subgraph(view, features, params, v, target).grad;
}

}  // namespace tua
