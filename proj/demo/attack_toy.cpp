// Trains a GCN on a toy graph (a class-0 clique and four class-1 pairs) and attacks it:
// fake nodes hanging off two class-0 nodes push linked class-1 victims to class 0.

#include <cstdio>
#include <memory>
#include <vector>

#include "tua/tua.hpp"

int main() {
  using namespace tua;
  std::vector<Edge> edges;
  for (NodeId u = 0; u < 8; ++u)
    for (NodeId v = u + 1; v < 8; ++v) edges.push_back({u, v});
  for (NodeId u = 8; u < 16; u += 2) edges.push_back({u, u + 1});
  std::vector<std::vector<std::size_t>> rows;
  std::vector<ClassId> labels;
  for (NodeId v = 0; v < 16; ++v) {
    const std::size_t c = v < 8 ? 0 : 1;
    rows.push_back({2 * c, 2 * c + 1});
    labels.push_back(c);
  }
  auto graph = std::make_shared<const Graph>(4, 2, edges, rows, labels);

  TrainConfig tc;
  tc.hidden_dim = 8;
  tc.epochs = 150;
  tc.dropout_rate = 0.0;
  for (NodeId v = 0; v < graph->num_nodes(); v += 2) tc.train_nodes.push_back(v);
  const TrainOutcome trained = train_model(*graph, tc);
  std::printf("train accuracy %.3f\n", trained.train_accuracy);

  AttackConfig cfg;
  cfg.target_class = 0;
  cfg.num_attack_nodes = 2;
  cfg.fake_per_attack = 3;
  cfg.num_ancillary = 3;
  cfg.max_iters = 0;
  cfg.seed = 2;
  const AttackResult clean = run_attack(graph, trained.params, cfg);
  std::printf("ASR with blank fake nodes: %.3f\n",
              evaluate_asr(trained.params, clean, eligible_test_nodes(clean)));

  cfg.max_iters = 8;
  const AttackResult result = run_attack(graph, trained.params, cfg);
  for (const TraceEntry& t : result.trace)
    std::printf("iter %zu: set fake %zu feature %zu (grad %.4f), objective sum %.4f\n", t.iter,
                t.position.row, t.position.col, t.grad_value, t.objective_sum);
  const auto victims = eligible_test_nodes(result);
  std::printf("ASR over %zu victims: %.3f\n", victims.size(),
              evaluate_asr(trained.params, result, victims));
}
