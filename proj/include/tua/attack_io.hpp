#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tua/attack.hpp"
#include "tua/error.hpp"

namespace tua {

inline const char* to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::completed: return "completed";
    case StopReason::budget: return "budget";
    case StopReason::exhausted: return "exhausted";
  }
  return "completed";
}

inline StopReason stop_reason_from_string(const std::string& s) {
  if (s == "completed") return StopReason::completed;
  if (s == "budget") return StopReason::budget;
  if (s == "exhausted") return StopReason::exhausted;
  throw ParseError("attack result: unknown stop_reason '" + s + "'");
}

inline nlohmann::json attack_result_to_json(const AttackResult& r) {
  const PerturbedGraph& pg = r.perturbed;
  nlohmann::json j;
  j["target_class"] = pg.target_class();
  j["attack_nodes"] = std::vector<NodeId>(pg.attack_nodes().begin(), pg.attack_nodes().end());
  j["fake_per_attack"] = pg.fake_per_attack();
  j["ancillary_nodes"] = r.ancillary_nodes;
  auto edges = nlohmann::json::array();
  for (const Edge& e : pg.fake_edges()) edges.push_back({e.u, e.v});
  j["fake_edges"] = std::move(edges);
  auto bits = nlohmann::json::array();
  for (const FeaturePosition& p : pg.fake_bit_positions()) bits.push_back({p.row, p.col});
  j["fake_feature_bits"] = std::move(bits);
  auto trace = nlohmann::json::array();
  for (const TraceEntry& t : r.trace)
    trace.push_back({{"iter", t.iter},
                     {"i", t.position.row},
                     {"j", t.position.col},
                     {"grad_value", t.grad_value},
                     {"objective_sum", t.objective_sum}});
  j["trace"] = std::move(trace);
  j["initial_objective_sum"] = r.initial_objective_sum;
  j["stop_reason"] = to_string(r.stop_reason);
  return j;
}

/// Rebuilds a result against the graph it was computed on. Fake edges are checked
/// against the ones implied by attack_nodes and fake_per_attack.
inline AttackResult attack_result_from_json(const nlohmann::json& j,
                                            std::shared_ptr<const Graph> graph) {
  try {
    for (const char* key : {"target_class", "attack_nodes", "ancillary_nodes", "fake_edges",
                            "fake_feature_bits", "trace"})
      if (!j.contains(key)) throw ParseError(std::string("attack result: missing field '") + key + "'");
    const auto attack = j.at("attack_nodes").get<std::vector<NodeId>>();
    if (attack.empty()) throw ParseError("attack result: empty attack_nodes");
    const auto& jedges = j.at("fake_edges");
    std::size_t fpa = 0;
    if (j.contains("fake_per_attack")) {
      fpa = j.at("fake_per_attack").get<std::size_t>();
    } else {
      if (jedges.size() % attack.size() != 0)
        throw ParseError("attack result: fake_edges do not split evenly across attack nodes");
      fpa = jedges.size() / attack.size();
    }
    AttackResult r{PerturbedGraph(std::move(graph), attack, fpa), {}, {}, 0.0, StopReason::completed};
    PerturbedGraph& pg = r.perturbed;
    if (pg.target_class() != j.at("target_class").get<ClassId>())
      throw ParseError("attack result: target_class disagrees with the attack nodes' label");

    std::vector<Edge> edges;
    for (const auto& e : jedges) {
      if (!e.is_array() || e.size() != 2) throw ParseError("attack result: fake edge must be [a, f]");
      edges.push_back(Edge{e[0].get<NodeId>(), e[1].get<NodeId>()});
    }
    if (edges != pg.fake_edges())
      throw ParseError("attack result: fake_edges do not match attack_nodes / fake_per_attack");

    for (const auto& b : j.at("fake_feature_bits")) {
      if (!b.is_array() || b.size() != 2) throw ParseError("attack result: bit must be [i, j]");
      const auto row = b[0].get<std::size_t>();
      const auto col = b[1].get<std::size_t>();
      if (row >= pg.num_fake() || col >= pg.base().num_features())
        throw ParseError("attack result: fake feature bit out of range");
      pg.set_fake_bit(row, col);
    }
    r.ancillary_nodes = j.at("ancillary_nodes").get<std::vector<NodeId>>();
    for (NodeId v : r.ancillary_nodes)
      if (v >= pg.base().num_nodes()) throw ParseError("attack result: ancillary node out of range");
    for (const auto& t : j.at("trace"))
      r.trace.push_back(TraceEntry{t.at("iter").get<std::size_t>(),
                                   FeaturePosition{t.at("i").get<std::size_t>(),
                                                   t.at("j").get<std::size_t>()},
                                   t.at("grad_value").get<double>(),
                                   t.at("objective_sum").get<double>()});
    if (j.contains("initial_objective_sum"))
      r.initial_objective_sum = j.at("initial_objective_sum").get<double>();
    if (j.contains("stop_reason"))
      r.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attack result: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("attack result: ") + e.what());
  } catch (const StructuralError& e) {
    throw ParseError(std::string("attack result: ") + e.what());
  }
}

inline void save_attack_result(const AttackResult& r, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << attack_result_to_json(r).dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

inline AttackResult load_attack_result(const std::string& path, std::shared_ptr<const Graph> graph) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return attack_result_from_json(j, std::move(graph));
}

}  // namespace tua
