#include <gtest/gtest.h>

#include <set>

#include "dense_reference.hpp"
#include "generators.hpp"
#include "tua/tua.hpp"

using namespace tua;

namespace {

std::shared_ptr<const Graph> shared(Graph g) { return std::make_shared<const Graph>(std::move(g)); }

std::vector<NodeId> ids_of(std::span<const NodeId> s) { return {s.begin(), s.end()}; }

// Two cliques of 8 joined by a bridge; class 0 holds features {0,1}, class 1 {2,3}.
std::shared_ptr<const Graph> communities() {
  std::vector<Edge> edges;
  for (NodeId base : {0u, 8u})
    for (NodeId u = base; u < base + 8; ++u)
      for (NodeId v = u + 1; v < base + 8; ++v)
        if ((u + v) % 3 != 0) edges.push_back({u, v});
  edges.push_back({7, 8});
  std::vector<std::vector<std::size_t>> rows;
  std::vector<ClassId> labels;
  for (NodeId v = 0; v < 16; ++v) {
    const std::size_t c = v < 8 ? 0 : 1;
    rows.push_back({2 * c, 2 * c + 1});
    labels.push_back(c);
  }
  return shared(Graph(4, 2, std::move(edges), std::move(rows), std::move(labels)));
}

GcnParams trained(const Graph& g) {
  TrainConfig cfg;
  cfg.hidden_dim = 8;
  cfg.epochs = 150;
  cfg.dropout_rate = 0.0;
  for (NodeId v = 0; v < g.num_nodes(); v += 2) cfg.train_nodes.push_back(v);
  return train(g, cfg);
}

}  // namespace

TEST(SelectNodes, AttackNodesFromTargetClassOnly) {
  const auto g = shared(gen::random_graph(1, {.nodes = 30, .classes = 3}));
  const auto a = select_attack_nodes(*g, 2, 4, 9);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(std::set<NodeId>(a.begin(), a.end()).size(), 4u);
  for (NodeId v : a) EXPECT_EQ(g->label(v), 2u);
  EXPECT_EQ(a, select_attack_nodes(*g, 2, 4, 9));
  EXPECT_THROW(select_attack_nodes(*g, 2, 11, 9), ConfigError);
  EXPECT_THROW(select_attack_nodes(*g, 3, 1, 9), ConfigError);
}

TEST(SelectNodes, AncillaryExcludesTargetClassAndExcludedNodes) {
  const auto g = shared(gen::random_graph(2, {.nodes = 12, .classes = 2}));
  const std::vector<NodeId> exclude{1, 3};
  const auto anc = select_ancillary_nodes(*g, 0, 4, 5, exclude);
  EXPECT_EQ(anc.size(), 4u);
  for (NodeId v : anc) {
    EXPECT_EQ(g->label(v), 1u);
    EXPECT_NE(v, 1u);
    EXPECT_NE(v, 3u);
  }
  EXPECT_THROW(select_ancillary_nodes(*g, 0, 5, 5, exclude), ConfigError);
}

TEST(Objective, NeverPositiveAndZeroWhenPredictedAsTarget) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  const std::vector<NodeId> attack{0};
  const PerturbedGraph pg = inject_fake_nodes(g, attack, 2);
  for (NodeId v = 1; v < 16; ++v) {
    const double f = objective(pg, p, v);
    EXPECT_LE(f, 0.0);
    const PerturbedGraph linked = link_victim(pg, v);
    const auto probs = forward(linked.normalized(), linked.features(), p);
    if (argmax(probs.row(v)) == 0) {
      EXPECT_EQ(f, 0.0);
    }
    EXPECT_NEAR(f, objective(pg, p, v, GradientPath::subgraph), 1e-12);
  }
  EXPECT_THROW(objective(pg, p, 0), ValidationError);
  EXPECT_THROW(objective(pg, p, 16), StructuralError);
}

TEST(Objective, MatchesDenseSixNodeSetting) {
  const auto g = shared(Graph(3, 2, {{0, 1}, {1, 2}, {3, 4}, {4, 5}}, {{0}, {0, 1}, {1}, {2}, {1, 2}, {2}},
                              {0, 0, 0, 1, 1, 1}));
  const GcnParams p = gen::random_params(21, 3, 4, 2, 1.5);
  const std::vector<NodeId> attack{0};
  PerturbedGraph pg = inject_fake_nodes(g, attack, 1);
  pg.set_fake_bit(0, 2);
  const dense::Setting s = gen::dense_setting(*g, attack, 1);
  const dense::Mat fake = gen::dense_fake(pg);
  for (NodeId v : {3u, 4u, 5u}) EXPECT_NEAR(objective(pg, p, v), s.objective(fake, gen::to_dense(p), v), 1e-14);
}

TEST(GradMatrix, SingleNodeEqualsItsOwnGradientAndDuplicatesAdd) {
  const auto g = shared(gen::random_graph(5, {.nodes = 14, .features = 5, .classes = 2, .edge_prob = 0.3}));
  const GcnParams p = gen::random_params(8, 5, 4, 2, 2.0);
  const std::vector<NodeId> attack{0, 2};
  PerturbedGraph pg = inject_fake_nodes(g, attack, 1);
  pg.set_fake_bit(1, 3);
  const dense::Setting s = gen::dense_setting(*g, attack, 1);
  for (NodeId v : {1u, 3u, 5u}) {
    const std::vector<NodeId> one{v};
    const Matrix single = grad_matrix(pg, p, one);
    const dense::Mat ref = s.fake_gradient(gen::dense_fake(pg), gen::to_dense(p), v);
    EXPECT_LT(gen::max_abs_diff(gen::to_dense(single), ref), 1e-12);
    const std::vector<NodeId> twice{v, v};
    Matrix doubled = single;
    doubled *= 2.0;
    EXPECT_LT(max_abs_diff(grad_matrix(pg, p, twice), doubled), 1e-15);
  }
  EXPECT_THROW(grad_matrix(pg, p, std::vector<NodeId>{}), ConfigError);
}

TEST(GreedySelect, PicksLargestUnsetWithRowMajorTies) {
  const Matrix grad{{0.1, 0.5}, {0.5, -1.0}};
  std::vector<std::uint8_t> mask(4, 0);
  EXPECT_EQ(greedy_select(grad, mask), (FeaturePosition{0, 1}));
  mask[1] = 1;
  EXPECT_EQ(greedy_select(grad, mask), (FeaturePosition{1, 0}));
  mask = {1, 1, 1, 0};
  EXPECT_EQ(greedy_select(grad, mask), (FeaturePosition{1, 1}));  // negative still chosen
  mask = {1, 1, 1, 1};
  EXPECT_FALSE(greedy_select(grad, mask).has_value());
  EXPECT_THROW(greedy_select(grad, std::vector<std::uint8_t>(3, 0)), ValidationError);
}

TEST(RunAttack, ZeroItersSetsNoBits) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 0, .num_attack_nodes = 1, .fake_per_attack = 2, .num_ancillary = 3,
                   .max_iters = 0, .seed = 1};
  const AttackResult r = run_attack(g, p, cfg);
  EXPECT_EQ(r.perturbed.num_fake_bits_set(), 0u);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.perturbed.fake_edges().size(), 2u);
  EXPECT_NEAR(r.initial_objective_sum, objective_sum(r.perturbed, p, r.ancillary_nodes, GradientPath::full_graph),
              1e-12);
}

TEST(RunAttack, BitsNeverExceedBudget) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  for (std::size_t delta : {0u, 1u, 3u, 5u}) {
    AttackConfig cfg{.target_class = 1, .num_attack_nodes = 2, .fake_per_attack = 1, .num_ancillary = 4,
                     .max_iters = 6, .budget = 2 + delta, .seed = 3};
    const AttackResult r = run_attack(g, p, cfg);
    EXPECT_EQ(r.perturbed.num_fake_bits_set(), std::min<std::size_t>(delta, 6));
    EXPECT_EQ(r.perturbed.num_fake() + r.perturbed.num_fake_bits_set() <= 2 + delta, true);
    if (delta < 6) {
      EXPECT_EQ(r.stop_reason, StopReason::budget);
    }
  }
}

TEST(RunAttack, BudgetBelowFakeCountRejected) {
  AttackConfig cfg{.num_attack_nodes = 3, .fake_per_attack = 2, .budget = 5};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.budget = 6;
  EXPECT_NO_THROW(cfg.validate());
  AttackConfig none{.num_ancillary = 0};
  EXPECT_THROW(none.validate(), ConfigError);
}

TEST(RunAttack, ExhaustsWhenEveryBitIsSet) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 0, .num_attack_nodes = 1, .fake_per_attack = 1, .num_ancillary = 2,
                   .max_iters = 10, .seed = 4};
  const AttackResult r = run_attack(g, p, cfg);
  EXPECT_EQ(r.perturbed.num_fake_bits_set(), 4u);
  EXPECT_EQ(r.stop_reason, StopReason::exhausted);
}

TEST(RunAttackProperty, TraceReplaysDenseGreedyLoop) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto g = shared(gen::random_graph(seed, {.nodes = 12, .features = 5, .classes = 2, .edge_prob = 0.3}));
    const GcnParams p = gen::random_params(seed + 40, 5, 6, 2, 2.0);
    AttackConfig cfg{.target_class = 0, .num_attack_nodes = 2, .fake_per_attack = 2, .num_ancillary = 3,
                     .max_iters = 5, .seed = seed};
    const AttackResult r = run_attack(g, p, cfg);
    const dense::Setting s = gen::dense_setting(*g, r.perturbed.attack_nodes(), 2);
    const dense::AttackRun ref = dense::attack(s, gen::to_dense(p), r.ancillary_nodes, 5, cfg.effective_budget());
    EXPECT_NEAR(r.initial_objective_sum, ref.initial_objective_sum, 1e-12);
    ASSERT_EQ(r.trace.size(), ref.steps.size()) << "seed " << seed;
    for (std::size_t k = 0; k < ref.steps.size(); ++k) {
      EXPECT_EQ(r.trace[k].iter, k + 1);
      EXPECT_EQ(r.trace[k].position.row, ref.steps[k].i);
      EXPECT_EQ(r.trace[k].position.col, ref.steps[k].j);
      EXPECT_NEAR(r.trace[k].grad_value, ref.steps[k].grad, 1e-12);
      EXPECT_NEAR(r.trace[k].objective_sum, ref.steps[k].objective_sum, 1e-12);
    }
    EXPECT_EQ(gen::dense_fake(r.perturbed), ref.fake);
  }
}

TEST(RunAttack, FullGraphAndSubgraphPathsAgree) {
  const auto g = shared(gen::random_graph(31, {.nodes = 40, .features = 6, .classes = 3, .edge_prob = 0.08}));
  const GcnParams p = gen::random_params(32, 6, 5, 3, 2.0);
  AttackConfig cfg{.target_class = 1, .num_attack_nodes = 2, .fake_per_attack = 2, .num_ancillary = 5,
                   .max_iters = 6, .seed = 33};
  const AttackResult a = run_attack(g, p, cfg, GradientPath::subgraph);
  const AttackResult b = run_attack(g, p, cfg, GradientPath::full_graph);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    EXPECT_EQ(a.trace[k].position, b.trace[k].position);
    EXPECT_NEAR(a.trace[k].grad_value, b.trace[k].grad_value, 1e-12);
  }
  const auto victims = eligible_test_nodes(a);
  EXPECT_EQ(evaluate_asr(p, a, victims, GradientPath::subgraph), evaluate_asr(p, b, victims, GradientPath::full_graph));
}

TEST(RunAttack, RejectsInconsistentInputs) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 1, .num_attack_nodes = 1, .fake_per_attack = 1, .num_ancillary = 1};
  const std::vector<NodeId> attack{0};  // label 0, target 1
  const std::vector<NodeId> anc{9};
  EXPECT_THROW(run_attack(g, p, cfg, attack, anc), ConfigError);
  const std::vector<NodeId> attack1{9};
  const std::vector<NodeId> same_class{10};
  EXPECT_THROW(run_attack(g, p, cfg, attack1, same_class), ConfigError);
  const GcnParams wrong = gen::random_params(1, 5, 4, 2);
  const std::vector<NodeId> anc0{0};
  EXPECT_THROW(run_attack(g, wrong, cfg, attack1, anc0), ValidationError);
}

TEST(Asr, BaselineCountsVictimsAlreadyInTargetClass) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 0, .num_attack_nodes = 1, .fake_per_attack = 1, .num_ancillary = 2,
                   .max_iters = 0, .seed = 7};
  const AttackResult r = run_attack(g, p, cfg);
  const auto victims = eligible_test_nodes(r);
  std::size_t hits = 0;
  for (NodeId v : victims) {
    const PerturbedGraph linked = link_victim(r.perturbed, v);
    hits += argmax(forward(linked.normalized(), linked.features(), p).row(v)) == 0;
  }
  EXPECT_DOUBLE_EQ(evaluate_asr(p, r, victims), static_cast<double>(hits) / victims.size());
}

TEST(Asr, SeparableToyIsFullyHijacked) {
  // Class 0 is a clique of 8; class 1 is four isolated pairs, so the attack link
  // dominates each victim's neighborhood.
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
  const auto g = shared(Graph(4, 2, std::move(edges), std::move(rows), std::move(labels)));
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 0, .num_attack_nodes = 2, .fake_per_attack = 3, .num_ancillary = 3,
                   .max_iters = 0, .seed = 2};
  const AttackResult clean = run_attack(g, p, cfg);
  EXPECT_LT(evaluate_asr(p, clean, eligible_test_nodes(clean)), 1.0);
  cfg.max_iters = 8;
  const AttackResult r = run_attack(g, p, cfg);
  EXPECT_DOUBLE_EQ(evaluate_asr(p, r, eligible_test_nodes(r)), 1.0);
}

TEST(Asr, InvalidTestSetsRejected) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 0, .num_attack_nodes = 1, .fake_per_attack = 1, .num_ancillary = 2,
                   .max_iters = 1, .seed = 7};
  const AttackResult r = run_attack(g, p, cfg);
  EXPECT_THROW(evaluate_asr(p, r, std::vector<NodeId>{}), ConfigError);
  const std::vector<NodeId> attacker{r.perturbed.attack_nodes()[0]};
  EXPECT_THROW(evaluate_asr(p, r, attacker), ValidationError);
  const std::vector<NodeId> anc{r.ancillary_nodes[0]};
  EXPECT_THROW(evaluate_asr(p, r, anc), ValidationError);
  const std::vector<NodeId> target_class{1};
  EXPECT_THROW(evaluate_asr(p, r, target_class), ValidationError);
  const std::vector<NodeId> far{99};
  EXPECT_THROW(evaluate_asr(p, r, far), StructuralError);
}

TEST(AttackJson, RoundTripPreservesEverything) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 1, .num_attack_nodes = 2, .fake_per_attack = 2, .num_ancillary = 3,
                   .max_iters = 4, .seed = 8};
  const AttackResult r = run_attack(g, p, cfg);
  const AttackResult back = attack_result_from_json(attack_result_to_json(r), g);
  EXPECT_EQ(ids_of(back.perturbed.attack_nodes()), ids_of(r.perturbed.attack_nodes()));
  EXPECT_EQ(back.ancillary_nodes, r.ancillary_nodes);
  EXPECT_EQ(back.perturbed.fake_bit_positions(), r.perturbed.fake_bit_positions());
  ASSERT_EQ(back.trace.size(), r.trace.size());
  for (std::size_t k = 0; k < r.trace.size(); ++k) {
    EXPECT_EQ(back.trace[k].position, r.trace[k].position);
    EXPECT_EQ(back.trace[k].grad_value, r.trace[k].grad_value);
    EXPECT_EQ(back.trace[k].objective_sum, r.trace[k].objective_sum);
  }
  EXPECT_EQ(back.stop_reason, r.stop_reason);
  EXPECT_EQ(evaluate_asr(p, back, eligible_test_nodes(back)), evaluate_asr(p, r, eligible_test_nodes(r)));
}

TEST(AttackJson, MissingFieldIsParseError) {
  const auto g = communities();
  const GcnParams p = trained(*g);
  AttackConfig cfg{.target_class = 1, .num_attack_nodes = 1, .fake_per_attack = 1, .num_ancillary = 2,
                   .max_iters = 1, .seed = 9};
  const AttackResult r = run_attack(g, p, cfg);
  for (const char* field : {"target_class", "attack_nodes", "fake_edges", "fake_feature_bits", "trace"}) {
    auto j = attack_result_to_json(r);
    j.erase(field);
    EXPECT_THROW(attack_result_from_json(j, g), ParseError) << field;
  }
  auto j = attack_result_to_json(r);
  j["target_class"] = 0;
  EXPECT_THROW(attack_result_from_json(j, g), ParseError);
}
