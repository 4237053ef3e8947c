#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tua/error.hpp"
#include "tua/matrix.hpp"

namespace tua {

/// Undirected edge, stored canonically with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  static Edge canonical(NodeId a, NodeId b) noexcept { return a < b ? Edge{a, b} : Edge{b, a}; }

  auto operator<=>(const Edge&) const = default;
};

/// Sorts, canonicalizes and deduplicates; drops self-loops. Returns the number of
/// self-loops removed.
inline std::size_t canonicalize_edges(std::vector<Edge>& edges) {
  std::size_t loops = 0;
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (const Edge& e : edges) {
    if (e.u == e.v) {
      ++loops;
      continue;
    }
    out.push_back(Edge::canonical(e.u, e.v));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  edges = std::move(out);
  return loops;
}

/// Compressed neighbor lists for an undirected edge set (self-loops excluded).
class AdjacencyList {
 public:
  AdjacencyList() = default;

  AdjacencyList(std::size_t num_nodes, std::span<const Edge> edges) : offsets_(num_nodes + 1, 0) {
    for (const Edge& e : edges) {
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    for (std::size_t i = 0; i < num_nodes; ++i) offsets_[i + 1] += offsets_[i];
    neighbors_.resize(offsets_[num_nodes]);
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const Edge& e : edges) {
      neighbors_[cursor[e.u]++] = e.v;
      neighbors_[cursor[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < num_nodes; ++i)
      std::sort(neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
  }

  std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }

  std::span<const NodeId> neighbors(NodeId v) const noexcept {
    return std::span<const NodeId>(neighbors_).subspan(offsets_[v], offsets_[v + 1] - offsets_[v]);
  }

  std::size_t degree(NodeId v) const noexcept { return offsets_[v + 1] - offsets_[v]; }

  bool has_edge(NodeId a, NodeId b) const noexcept {
    const auto n = neighbors(a);
    return std::binary_search(n.begin(), n.end(), b);
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> neighbors_;
};

/// Immutable attributed graph: undirected topology, binary features, class labels.
class Graph {
 public:
  Graph() = default;

  /// Validates and canonicalizes. feature_rows[v] lists the indices of v's nonzero
  /// features (any order, duplicates rejected).
  Graph(std::size_t num_features, std::size_t num_classes, std::vector<Edge> edges,
        std::vector<std::vector<std::size_t>> feature_rows, std::vector<ClassId> labels)
      : num_nodes_(labels.size()), num_features_(num_features), num_classes_(num_classes),
        features_(num_features), labels_(std::move(labels)) {
    if (feature_rows.size() != num_nodes_)
      throw StructuralError("Graph: " + std::to_string(feature_rows.size()) +
                            " feature rows for " + std::to_string(num_nodes_) + " labels");
    for (std::size_t v = 0; v < num_nodes_; ++v) {
      if (labels_[v] >= num_classes_)
        throw ValidationError("Graph: label " + std::to_string(labels_[v]) + " of node " +
                              std::to_string(v) + " outside [0, " + std::to_string(num_classes_) +
                              ")");
    }
    for (const Edge& e : edges) {
      if (e.u >= num_nodes_ || e.v >= num_nodes_)
        throw StructuralError("Graph: edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                              ") references a node outside [0, " + std::to_string(num_nodes_) +
                              ")");
    }
    self_loops_dropped_ = canonicalize_edges(edges);
    edges_ = std::move(edges);
    adjacency_ = AdjacencyList(num_nodes_, edges_);

    std::vector<double> ones;
    for (std::size_t v = 0; v < num_nodes_; ++v) {
      auto& cols = feature_rows[v];
      std::sort(cols.begin(), cols.end());
      if (std::adjacent_find(cols.begin(), cols.end()) != cols.end())
        throw ValidationError("Graph: duplicate feature index in row " + std::to_string(v));
      if (!cols.empty() && cols.back() >= num_features_)
        throw StructuralError("Graph: feature index " + std::to_string(cols.back()) +
                              " outside [0, " + std::to_string(num_features_) + ")");
      ones.assign(cols.size(), 1.0);
      features_.append_row(cols, ones);
    }
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_features() const noexcept { return num_features_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }

  std::span<const Edge> edges() const noexcept { return edges_; }
  const AdjacencyList& adjacency() const noexcept { return adjacency_; }
  std::span<const NodeId> neighbors(NodeId v) const noexcept { return adjacency_.neighbors(v); }
  std::size_t degree(NodeId v) const noexcept { return adjacency_.degree(v); }
  bool has_edge(NodeId a, NodeId b) const noexcept { return adjacency_.has_edge(a, b); }

  /// Binary feature rows as sparse rows with unit values.
  const SparseRows& features() const noexcept { return features_; }
  std::span<const std::size_t> feature_indices(NodeId v) const noexcept {
    return features_.row(v).cols;
  }
  bool has_feature(NodeId v, std::size_t j) const noexcept {
    const auto cols = feature_indices(v);
    return std::binary_search(cols.begin(), cols.end(), j);
  }

  std::span<const ClassId> labels() const noexcept { return labels_; }
  ClassId label(NodeId v) const noexcept { return labels_[v]; }

  std::vector<NodeId> nodes_with_label(ClassId c) const {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < num_nodes_; ++v)
      if (labels_[v] == c) out.push_back(v);
    return out;
  }

  std::size_t self_loops_dropped() const noexcept { return self_loops_dropped_; }

  /// Structural equality: same dimensions, edges, features and labels.
  bool operator==(const Graph& other) const {
    return num_nodes_ == other.num_nodes_ && num_features_ == other.num_features_ &&
           num_classes_ == other.num_classes_ && edges_ == other.edges_ &&
           features_ == other.features_ && labels_ == other.labels_;
  }

 private:
  std::size_t num_nodes_ = 0;
  std::size_t num_features_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<Edge> edges_;
  AdjacencyList adjacency_{0, {}};
  SparseRows features_;
  std::vector<ClassId> labels_;
  std::size_t self_loops_dropped_ = 0;
};

/// Builds a graph from an edge list, a dense 0/1 feature matrix (one row per node) and
/// labels. The class count defaults to max(label) + 1.
inline Graph build_graph(std::span<const Edge> edges, const Matrix& features,
                         std::span<const ClassId> labels,
                         std::optional<std::size_t> num_classes = std::nullopt) {
  if (features.rows() != labels.size())
    throw StructuralError("build_graph: " + std::to_string(features.rows()) +
                          " feature rows for " + std::to_string(labels.size()) + " labels");
  std::vector<std::vector<std::size_t>> rows(features.rows());
  for (std::size_t v = 0; v < features.rows(); ++v) {
    for (std::size_t j = 0; j < features.cols(); ++j) {
      const double x = features(v, j);
      if (x == 1.0)
        rows[v].push_back(j);
      else if (x != 0.0)
        throw ValidationError("build_graph: feature (" + std::to_string(v) + ", " +
                              std::to_string(j) + ") = " + std::to_string(x) + " is not binary");
    }
  }
  std::size_t classes = 0;
  if (num_classes) {
    classes = *num_classes;
  } else if (!labels.empty()) {
    classes = *std::max_element(labels.begin(), labels.end()) + 1;
  }
  return Graph(features.cols(), classes, std::vector<Edge>(edges.begin(), edges.end()),
               std::move(rows), std::vector<ClassId>(labels.begin(), labels.end()));
}

/// Convenience overload taking raw (a, b) pairs in either orientation.
inline Graph build_graph(std::span<const std::pair<NodeId, NodeId>> pairs, const Matrix& features,
                         std::span<const ClassId> labels,
                         std::optional<std::size_t> num_classes = std::nullopt) {
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (auto [a, b] : pairs) edges.push_back(Edge{a, b});
  return build_graph(edges, features, labels, num_classes);
}

}  // namespace tua
