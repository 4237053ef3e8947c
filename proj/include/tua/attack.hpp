#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tua/error.hpp"
#include "tua/gcn.hpp"
#include "tua/graph.hpp"
#include "tua/matrix.hpp"
#include "tua/perturbed_graph.hpp"
#include "tua/rng.hpp"
#include "tua/subgraph.hpp"

namespace tua {

struct AttackConfig {
  ClassId target_class = 0;
  std::size_t num_attack_nodes = 3;
  std::size_t fake_per_attack = 2;
  std::size_t num_ancillary = 20;
  std::size_t max_iters = 25;
  std::optional<std::size_t> budget;  // defaults to num_fake() + max_iters
  std::uint64_t seed = 0;

  std::size_t num_fake() const noexcept { return num_attack_nodes * fake_per_attack; }
  std::size_t effective_budget() const noexcept { return budget.value_or(num_fake() + max_iters); }

  void validate() const {
    if (num_attack_nodes == 0) throw ConfigError("AttackConfig: need at least one attack node");
    if (fake_per_attack == 0) throw ConfigError("AttackConfig: fake_per_attack must be >= 1");
    if (num_ancillary == 0) throw ConfigError("AttackConfig: need at least one ancillary node");
    if (effective_budget() < num_fake())
      throw ConfigError("AttackConfig: budget " + std::to_string(effective_budget()) +
                        " cannot hold the " + std::to_string(num_fake()) + " injected edges");
  }
};

/// Seeds for the two random draws of an attack, derived from AttackConfig::seed.
inline std::uint64_t attack_node_seed(std::uint64_t seed) noexcept { return combine_seed(seed, 1); }
inline std::uint64_t ancillary_seed(std::uint64_t seed) noexcept { return combine_seed(seed, 2); }

enum class GradientPath { subgraph, full_graph };

/// N_Fake x d matrix of summed objective gradients.
using GradMatrix = Matrix;

struct TraceEntry {
  std::size_t iter = 0;        // 1-based
  FeaturePosition position;    // bit set in this iteration
  double grad_value = 0.0;     // Grad(i, j) when chosen
  double objective_sum = 0.0;  // sum of F over ancillary nodes after setting the bit
};

enum class StopReason { completed, budget, exhausted };

struct AttackResult {
  PerturbedGraph perturbed;
  std::vector<NodeId> ancillary_nodes;
  std::vector<TraceEntry> trace;
  double initial_objective_sum = 0.0;
  StopReason stop_reason = StopReason::completed;
};

// ---------------------------------------------------------------------------
// Node selection.
// ---------------------------------------------------------------------------

inline std::vector<NodeId> select_attack_nodes(const Graph& graph, ClassId target_class,
                                               std::size_t n, std::uint64_t seed) {
  if (target_class >= graph.num_classes())
    throw ConfigError("select_attack_nodes: class " + std::to_string(target_class) +
                      " does not exist");
  const std::vector<NodeId> pool = graph.nodes_with_label(target_class);
  if (pool.size() < n)
    throw ConfigError("select_attack_nodes: class " + std::to_string(target_class) + " has " +
                      std::to_string(pool.size()) + " nodes, " + std::to_string(n) + " requested");
  Rng rng(seed);
  return rng.sample(std::span<const NodeId>(pool), n);
}

inline std::vector<NodeId> select_ancillary_nodes(const Graph& graph, ClassId target_class,
                                                  std::size_t n, std::uint64_t seed,
                                                  std::span<const NodeId> exclude = {}) {
  std::vector<std::uint8_t> banned(graph.num_nodes(), 0);
  for (NodeId v : exclude)
    if (v < graph.num_nodes()) banned[v] = 1;
  std::vector<NodeId> pool;
  for (NodeId v = 0; v < graph.num_nodes(); ++v)
    if (graph.label(v) != target_class && !banned[v]) pool.push_back(v);
  if (pool.size() < n)
    throw ConfigError("select_ancillary_nodes: only " + std::to_string(pool.size()) +
                      " eligible nodes, " + std::to_string(n) + " requested");
  Rng rng(seed);
  return rng.sample(std::span<const NodeId>(pool), n);
}

// ---------------------------------------------------------------------------
// Objective and gradient matrix.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_ancillary(const PerturbedGraph& pg, NodeId v) {
  if (v >= pg.base().num_nodes())
    throw StructuralError("attack: node " + std::to_string(v) + " is not an original node");
  if (pg.is_attack_node(v))
    throw ValidationError("attack: node " + std::to_string(v) + " is an attack node");
}

}  // namespace detail

/// F(A'_(v,V_A), X', v) = p[v, c_A] - p[v, c_v], c_v the predicted class of v once it is
/// linked to the attack nodes. Never positive; zero iff v is predicted as c_A.
inline double objective(const PerturbedGraph& pg, const GcnParams& params, NodeId v,
                        GradientPath path = GradientPath::full_graph) {
  detail::check_ancillary(pg, v);
  if (path == GradientPath::full_graph) {
    const PerturbedGraph linked = link_victim(pg, v);
    const ProbMatrix probs = forward(linked.normalized(), linked.features(), params);
    return targeted_objective(probs.row(v), pg.target_class()).value;
  }
  VictimSubgraphBuilder builder(pg);
  const SubgraphView view = builder.build(v);
  return targeted_objective(forward_on_subgraph(view, pg.features(), params, v), pg.target_class())
      .value;
}

/// Objective and fake-block gradient for one ancillary node via the full assembled graph.
inline ObjectiveGradient full_graph_objective_gradient(const PerturbedGraph& pg,
                                                       const GcnParams& params, NodeId v) {
  detail::check_ancillary(pg, v);
  const PerturbedGraph linked = link_victim(pg, v);
  std::vector<NodeId> rows(pg.num_fake());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = pg.fake_begin() + i;
  return objective_gradient(linked.normalized(), linked.features(), params, v, pg.target_class(),
                            rows);
}

struct GradientSummary {
  GradMatrix grad;
  double objective_sum = 0.0;
};

/// Grad = sum over ancillary nodes (in list order) of the fake-block gradient of F, each
/// node evaluated with its own victim link and renormalized adjacency.
inline GradientSummary gradient_summary(const PerturbedGraph& pg, const GcnParams& params,
                                        std::span<const NodeId> ancillary,
                                        GradientPath path = GradientPath::subgraph) {
  if (ancillary.empty()) throw ConfigError("grad_matrix: empty ancillary list");
  params.validate_for(pg.base().num_features(), pg.base().num_classes());
  GradientSummary out{GradMatrix(pg.num_fake(), pg.base().num_features()), 0.0};
  std::optional<VictimSubgraphBuilder> builder;
  if (path == GradientPath::subgraph) builder.emplace(pg);
  const auto features = pg.features();
  for (NodeId v : ancillary) {
    detail::check_ancillary(pg, v);
    ObjectiveGradient og;
    if (path == GradientPath::subgraph) {
      const SubgraphView view = builder->build(v);
      og = objective_gradient_on_subgraph(view, features, params, v, pg.target_class());
    } else {
      og = full_graph_objective_gradient(pg, params, v);
    }
    out.grad += og.grad;
    out.objective_sum += og.value;
  }
  return out;
}

inline GradMatrix grad_matrix(const PerturbedGraph& pg, const GcnParams& params,
                              std::span<const NodeId> ancillary,
                              GradientPath path = GradientPath::subgraph) {
  return gradient_summary(pg, params, ancillary, path).grad;
}

inline double objective_sum(const PerturbedGraph& pg, const GcnParams& params,
                            std::span<const NodeId> nodes,
                            GradientPath path = GradientPath::subgraph) {
  double sum = 0.0;
  std::optional<VictimSubgraphBuilder> builder;
  if (path == GradientPath::subgraph) builder.emplace(pg);
  for (NodeId v : nodes) {
    if (path == GradientPath::subgraph) {
      detail::check_ancillary(pg, v);
      const SubgraphView view = builder->build(v);
      sum += targeted_objective(forward_on_subgraph(view, pg.features(), params, v),
                                pg.target_class())
                 .value;
    } else {
      sum += objective(pg, params, v, GradientPath::full_graph);
    }
  }
  return sum;
}

/// Largest Grad entry whose bit is still 0. Ties go to the lowest (row, col).
/// Returns nullopt when every position is already set.
inline std::optional<FeaturePosition> greedy_select(const GradMatrix& grad,
                                                    std::span<const std::uint8_t> already_set) {
  if (already_set.size() != grad.size())
    throw ValidationError("greedy_select: mask size does not match the gradient matrix");
  std::optional<std::size_t> best;
  const auto values = grad.data();
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (already_set[k]) continue;
    if (!best || values[k] > values[*best]) best = k;
  }
  if (!best) return std::nullopt;
  return FeaturePosition{*best / grad.cols(), *best % grad.cols()};
}

// ---------------------------------------------------------------------------
// The attack loop.
// ---------------------------------------------------------------------------

/// Injects zero-feature fake nodes, then for up to max_iters iterations computes Grad
/// over the ancillary nodes and sets the best unset fake feature bit to 1. Stops early
/// when the next bit would exceed the budget or no unset bit remains.
inline AttackResult run_attack(std::shared_ptr<const Graph> graph, const GcnParams& params,
                               const AttackConfig& cfg, std::span<const NodeId> attack_nodes,
                               std::span<const NodeId> ancillary,
                               GradientPath path = GradientPath::subgraph) {
  cfg.validate();
  if (attack_nodes.size() != cfg.num_attack_nodes)
    throw ConfigError("run_attack: config expects " + std::to_string(cfg.num_attack_nodes) +
                      " attack nodes, got " + std::to_string(attack_nodes.size()));
  if (ancillary.empty()) throw ConfigError("run_attack: empty ancillary list");
  params.validate_for(graph->num_features(), graph->num_classes());

  AttackResult result{inject_fake_nodes(std::move(graph), attack_nodes, cfg.fake_per_attack),
                      std::vector<NodeId>(ancillary.begin(), ancillary.end()),
                      {},
                      0.0,
                      StopReason::completed};
  PerturbedGraph& pg = result.perturbed;
  if (pg.target_class() != cfg.target_class)
    throw ConfigError("run_attack: attack nodes have label " + std::to_string(pg.target_class()) +
                      " but the target class is " + std::to_string(cfg.target_class));
  for (NodeId v : ancillary) {
    detail::check_ancillary(pg, v);
    if (pg.base().label(v) == cfg.target_class)
      throw ConfigError("run_attack: ancillary node " + std::to_string(v) +
                        " belongs to the target class");
  }

  const std::size_t budget = cfg.effective_budget();
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    const GradientSummary summary = gradient_summary(pg, params, ancillary, path);
    if (iter == 1)
      result.initial_objective_sum = summary.objective_sum;
    else
      result.trace.back().objective_sum = summary.objective_sum;

    if (pg.num_fake() + pg.num_fake_bits_set() + 1 > budget) {
      result.stop_reason = StopReason::budget;
      return result;
    }
    const auto pick = greedy_select(summary.grad, pg.fake_bits());
    if (!pick) {
      result.stop_reason = StopReason::exhausted;
      return result;
    }
    pg.set_fake_bit(pick->row, pick->col);
    result.trace.push_back(TraceEntry{iter, *pick, summary.grad(pick->row, pick->col), 0.0});
  }
  if (result.trace.empty()) {
    result.initial_objective_sum = objective_sum(pg, params, ancillary, path);
  } else {
    result.trace.back().objective_sum = objective_sum(pg, params, ancillary, path);
  }
  return result;
}

/// Draws attack and ancillary nodes from cfg.seed, then runs the attack.
inline AttackResult run_attack(std::shared_ptr<const Graph> graph, const GcnParams& params,
                               const AttackConfig& cfg,
                               GradientPath path = GradientPath::subgraph) {
  cfg.validate();
  const auto attack =
      select_attack_nodes(*graph, cfg.target_class, cfg.num_attack_nodes, attack_node_seed(cfg.seed));
  const auto ancillary = select_ancillary_nodes(*graph, cfg.target_class, cfg.num_ancillary,
                                                ancillary_seed(cfg.seed), attack);
  return run_attack(std::move(graph), params, cfg, attack, ancillary, path);
}

// ---------------------------------------------------------------------------
// Attack success rate.
// ---------------------------------------------------------------------------

/// Victims eligible for ASR evaluation: every original node that is neither an attack
/// node, an ancillary node, nor labeled with the target class.
inline std::vector<NodeId> eligible_test_nodes(const AttackResult& result) {
  const PerturbedGraph& pg = result.perturbed;
  const Graph& g = pg.base();
  std::vector<std::uint8_t> banned(g.num_nodes(), 0);
  for (NodeId v : result.ancillary_nodes) banned[v] = 1;
  for (NodeId a : pg.attack_nodes()) banned[a] = 1;
  std::vector<NodeId> out;
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    if (!banned[v] && g.label(v) != pg.target_class()) out.push_back(v);
  return out;
}

/// Predicted class of each victim after wiring it (alone) to every attack node.
inline std::vector<ClassId> linked_predictions(const PerturbedGraph& pg, const GcnParams& params,
                                               std::span<const NodeId> victims,
                                               GradientPath path = GradientPath::subgraph) {
  params.validate_for(pg.base().num_features(), pg.base().num_classes());
  std::vector<ClassId> out;
  out.reserve(victims.size());
  if (path == GradientPath::subgraph) {
    VictimSubgraphBuilder builder(pg);
    const auto features = pg.features();
    for (NodeId v : victims) {
      detail::check_ancillary(pg, v);
      const SubgraphView view = builder.build(v);
      out.push_back(argmax(forward_on_subgraph(view, features, params, v)));
    }
  } else {
    PerturbedGraph linked = pg;
    for (NodeId v : victims) {
      detail::check_ancillary(pg, v);
      linked.link_victim(v);
      out.push_back(argmax(forward(linked.normalized(), linked.features(), params).row(v)));
      linked.unlink_victim();
    }
  }
  return out;
}

/// Fraction of test nodes predicted as the target class when linked to the attack nodes.
inline double evaluate_asr(const GcnParams& params, const AttackResult& result,
                           std::span<const NodeId> test_nodes,
                           GradientPath path = GradientPath::subgraph) {
  if (test_nodes.empty()) throw ConfigError("evaluate_asr: empty test set");
  const PerturbedGraph& pg = result.perturbed;
  std::vector<std::uint8_t> banned(pg.base().num_nodes(), 0);
  for (NodeId v : result.ancillary_nodes) banned[v] = 1;
  for (NodeId v : test_nodes) {
    if (v >= pg.base().num_nodes())
      throw StructuralError("evaluate_asr: test node " + std::to_string(v) + " out of range");
    if (banned[v] || pg.is_attack_node(v) || pg.base().label(v) == pg.target_class())
      throw ValidationError("evaluate_asr: test node " + std::to_string(v) +
                            " is an attack node, an ancillary node or in the target class");
  }
  const auto preds = linked_predictions(pg, params, test_nodes, path);
  const auto hits = std::count(preds.begin(), preds.end(), pg.target_class());
  return static_cast<double>(hits) / static_cast<double>(test_nodes.size());
}

inline double evaluate_asr(const Graph& graph, const GcnParams& params, const AttackResult& result,
                           std::span<const NodeId> test_nodes,
                           GradientPath path = GradientPath::subgraph) {
  if (&graph != &result.perturbed.base() && !(graph == result.perturbed.base()))
    throw ValidationError("evaluate_asr: result was computed on a different graph");
  return evaluate_asr(params, result, test_nodes, path);
}

}  // namespace tua
