#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tua/error.hpp"
#include "tua/graph.hpp"

namespace tua {

/// Symmetrically normalized adjacency with self-loops, D^-1/2 (A + I) D^-1/2, in CSR
/// form. degree(u) counts neighbors plus the self-loop.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;

  /// Takes ownership of CSR arrays. Column indices must be sorted per row.
  NormalizedAdjacency(std::vector<std::size_t> offsets, std::vector<NodeId> cols,
                      std::vector<double> values, std::vector<std::size_t> degrees)
      : offsets_(std::move(offsets)), cols_(std::move(cols)), values_(std::move(values)),
        degrees_(std::move(degrees)) {
    if (offsets_.empty() || offsets_.size() != degrees_.size() + 1 ||
        cols_.size() != values_.size() || offsets_.back() != cols_.size())
      throw StructuralError("NormalizedAdjacency: inconsistent CSR arrays");
  }

  std::size_t size() const noexcept { return degrees_.size(); }
  std::size_t nnz() const noexcept { return cols_.size(); }

  std::span<const NodeId> row_cols(NodeId u) const noexcept {
    return std::span<const NodeId>(cols_).subspan(offsets_[u], offsets_[u + 1] - offsets_[u]);
  }
  std::span<const double> row_values(NodeId u) const noexcept {
    return std::span<const double>(values_).subspan(offsets_[u], offsets_[u + 1] - offsets_[u]);
  }

  std::span<const std::size_t> degrees() const noexcept { return degrees_; }
  std::size_t degree(NodeId u) const noexcept { return degrees_[u]; }

  /// Entry (u, w); zero when absent.
  double value(NodeId u, NodeId w) const noexcept {
    const auto cols = row_cols(u);
    const auto it = std::lower_bound(cols.begin(), cols.end(), w);
    if (it == cols.end() || *it != w) return 0.0;
    return values_[offsets_[u] + static_cast<std::size_t>(it - cols.begin())];
  }

  Matrix to_dense() const {
    Matrix out(size(), size());
    for (NodeId u = 0; u < size(); ++u) {
      const auto c = row_cols(u);
      const auto v = row_values(u);
      for (std::size_t k = 0; k < c.size(); ++k) out(u, c[k]) = v[k];
    }
    return out;
  }

  bool operator==(const NormalizedAdjacency&) const = default;

 private:
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> cols_;
  std::vector<double> values_;
  std::vector<std::size_t> degrees_;
};

inline double normalized_weight(std::size_t deg_u, std::size_t deg_w) noexcept {
  return 1.0 / std::sqrt(static_cast<double>(deg_u) * static_cast<double>(deg_w));
}

/// Builds the normalized adjacency of an undirected graph on num_nodes nodes from
/// scratch. Edges may come in either orientation; duplicates and self-loops are ignored.
inline NormalizedAdjacency normalize(std::size_t num_nodes, std::span<const Edge> edges) {
  std::vector<std::size_t> offsets(num_nodes + 1, 0);
  for (const Edge& e : edges) {
    if (e.u >= num_nodes || e.v >= num_nodes)
      throw StructuralError("normalize: edge endpoint out of range");
    if (e.u == e.v) continue;
    ++offsets[e.u + 1];
    ++offsets[e.v + 1];
  }
  for (std::size_t u = 0; u < num_nodes; ++u) offsets[u + 1] += offsets[u] + 1;  // + self-loop
  // offsets currently hold the upper bound (with duplicates); compact after dedup.
  std::vector<NodeId> cols(offsets[num_nodes]);
  std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
  for (NodeId u = 0; u < num_nodes; ++u) cols[cursor[u]++] = u;
  for (const Edge& e : edges) {
    if (e.u == e.v) continue;
    cols[cursor[e.u]++] = e.v;
    cols[cursor[e.v]++] = e.u;
  }

  std::vector<std::size_t> compact_offsets(num_nodes + 1, 0);
  std::vector<std::size_t> degrees(num_nodes);
  std::size_t write = 0;
  for (NodeId u = 0; u < num_nodes; ++u) {
    auto first = cols.begin() + static_cast<std::ptrdiff_t>(offsets[u]);
    auto last = cols.begin() + static_cast<std::ptrdiff_t>(offsets[u + 1]);
    std::sort(first, last);
    last = std::unique(first, last);
    const std::size_t count = static_cast<std::size_t>(last - first);
    std::copy(first, last, cols.begin() + static_cast<std::ptrdiff_t>(write));
    write += count;
    compact_offsets[u + 1] = write;
    degrees[u] = count;
  }
  cols.resize(write);

  std::vector<double> values(write);
  for (NodeId u = 0; u < num_nodes; ++u)
    for (std::size_t k = compact_offsets[u]; k < compact_offsets[u + 1]; ++k)
      values[k] = normalized_weight(degrees[u], degrees[cols[k]]);

  return NormalizedAdjacency(std::move(compact_offsets), std::move(cols), std::move(values),
                             std::move(degrees));
}

inline NormalizedAdjacency normalize(const Graph& graph) {
  return normalize(graph.num_nodes(), graph.edges());
}

}  // namespace tua
