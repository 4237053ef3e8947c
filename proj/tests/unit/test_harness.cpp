#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <map>
#include <sstream>

#include "generators.hpp"
#include "tua/tua.hpp"

using namespace tua;

namespace {

struct Fixture {
  std::shared_ptr<const Graph> graph;
  GcnParams params;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    auto g = std::make_shared<const Graph>(
        gen::random_graph(2024, {.nodes = 60, .features = 10, .classes = 3, .edge_prob = 0.06}));
    TrainConfig cfg;
    cfg.hidden_dim = 8;
    cfg.epochs = 60;
    for (NodeId v = 0; v < 60; v += 2) cfg.train_nodes.push_back(v);
    return Fixture{g, train(*g, cfg)};
  }();
  return f;
}

ExperimentPlan small_plan() {
  ExperimentPlan plan;
  plan.dataset = "toy";
  plan.classes = {0, 2};
  plan.attack_node_counts = {1, 2};
  plan.ancillary_counts = {3};
  plan.fake_per_attack = 1;
  plan.repetitions = 2;
  plan.max_iters = 3;
  plan.base_seed = 5;
  plan.record_timing = false;
  return plan;
}

std::string csv_of(std::span<const AsrRecord> records) {
  std::ostringstream os;
  write_asr_csv(os, records);
  return os.str();
}

}  // namespace

TEST(CellSeed, DependsOnEveryCoordinate) {
  const std::uint64_t s = cell_seed(1, "cora", 2, 3, 20, 0);
  EXPECT_EQ(s, cell_seed(1, "cora", 2, 3, 20, 0));
  EXPECT_NE(s, cell_seed(2, "cora", 2, 3, 20, 0));
  EXPECT_NE(s, cell_seed(1, "citeseer", 2, 3, 20, 0));
  EXPECT_NE(s, cell_seed(1, "cora", 1, 3, 20, 0));
  EXPECT_NE(s, cell_seed(1, "cora", 2, 4, 20, 0));
  EXPECT_NE(s, cell_seed(1, "cora", 2, 3, 15, 0));
  EXPECT_NE(s, cell_seed(1, "cora", 2, 3, 20, 1));
}

TEST(PlanCells, OrderIsClassThenAttackThenAncillaryThenRepetition) {
  ExperimentPlan plan = small_plan();
  plan.ancillary_counts = {5, 10};
  const auto cells = plan_cells(plan, *fixture().graph);
  ASSERT_EQ(cells.size(), 2u * 2u * 2u * 2u);
  EXPECT_EQ(cells[0].class_id, 0u);
  EXPECT_EQ(cells[1].repetition, 1u);
  EXPECT_EQ(cells[2].n_ancillary, 10u);
  EXPECT_EQ(cells[4].n_attack, 2u);
  EXPECT_EQ(cells[8].class_id, 2u);
  plan.classes.clear();
  EXPECT_EQ(plan_cells(plan, *fixture().graph).size(), 3u * 2u * 2u * 2u);
  plan.classes = {3};
  EXPECT_THROW(plan_cells(plan, *fixture().graph), ConfigError);
  plan = small_plan();
  plan.repetitions = 0;
  EXPECT_THROW(plan.validate(), ConfigError);
}

TEST(RunPlan, SingleCellGivesOneRecordWithItsCoordinates) {
  const Fixture& f = fixture();
  ExperimentPlan plan = small_plan();
  plan.classes = {1};
  plan.attack_node_counts = {2};
  plan.repetitions = 1;
  const auto records = run_plan(f.graph, f.params, plan);
  ASSERT_EQ(records.size(), 1u);
  const AsrRecord& r = records[0];
  EXPECT_EQ(r.dataset, "toy");
  EXPECT_EQ(r.class_id, 1u);
  EXPECT_EQ(r.n_attack, 2u);
  EXPECT_EQ(r.n_fake, 2u);
  EXPECT_EQ(r.n_ancillary, 3u);
  EXPECT_EQ(r.seed, cell_seed(5, "toy", 1, 2, 3, 0));
  EXPECT_EQ(r.runtime_seconds, 0.0);
  EXPECT_GE(r.asr, 0.0);
  EXPECT_LE(r.asr, 1.0);

  // Independent replay of the same cell through the attack API.
  AttackConfig cfg{.target_class = 1, .num_attack_nodes = 2, .fake_per_attack = 1, .num_ancillary = 3,
                   .max_iters = 3, .seed = r.seed};
  const AttackResult res = run_attack(f.graph, f.params, cfg);
  EXPECT_EQ(r.asr, evaluate_asr(f.params, res, eligible_test_nodes(res)));
}

TEST(RunPlan, RepeatedRunsGiveIdenticalCsv) {
  const Fixture& f = fixture();
  const auto a = run_plan(f.graph, f.params, small_plan());
  const auto b = run_plan(f.graph, f.params, small_plan());
  EXPECT_EQ(csv_of(a), csv_of(b));
}

TEST(RunPlan, ThreadCountDoesNotChangeResults) {
  const Fixture& f = fixture();
  ExperimentPlan plan = small_plan();
  const auto serial = run_plan(f.graph, f.params, plan);
  plan.threads = 4;
  std::size_t calls = 0;
  const auto parallel = run_plan(f.graph, f.params, plan, [&](std::size_t, std::size_t, const AsrRecord&) { ++calls; });
  EXPECT_EQ(csv_of(serial), csv_of(parallel));
  EXPECT_EQ(calls, serial.size());
}

TEST(ParallelFor, VisitsEachIndexOnceAndRethrows) {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 3, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 2,
                            [](std::size_t i) {
                              if (i == 7) throw ConfigError("boom");
                            }),
               ConfigError);
}

TEST(Fluctuation, AttackNodesFixedAncillaryResampled) {
  const Fixture& f = fixture();
  ExperimentPlan plan = small_plan();
  plan.classes = {0};
  plan.attack_node_counts = {2};
  plan.repetitions = 4;
  const auto records = run_fluctuation(f.graph, f.params, plan);
  ASSERT_EQ(records.size(), 4u);
  const std::uint64_t seed0 = cell_seed(5, "toy", 0, 2, 3, 0);
  const auto attack = select_attack_nodes(*f.graph, 0, 2, attack_node_seed(seed0));
  std::vector<std::vector<NodeId>> ancillary_sets;
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(records[r].seed, seed0);
    EXPECT_EQ(records[r].repetition, r);
    const auto anc = select_ancillary_nodes(*f.graph, 0, 3, combine_seed(ancillary_seed(seed0), r), attack);
    ancillary_sets.push_back(anc);
    AttackConfig cfg{.target_class = 0, .num_attack_nodes = 2, .fake_per_attack = 1, .num_ancillary = 3,
                     .max_iters = 3, .seed = seed0};
    const AttackResult res = run_attack(f.graph, f.params, cfg, attack, anc);
    EXPECT_EQ(records[r].asr, evaluate_asr(f.params, res, eligible_test_nodes(res)));
  }
  EXPECT_NE(ancillary_sets[0], ancillary_sets[1]);
}

TEST(AsrCsv, RoundTripAndHeader) {
  std::vector<AsrRecord> recs{{"cora", 1, 3, 6, 20, 0, 99, 0.1 + 0.2, 1.5},
                              {"cora", 2, 4, 8, 5, 9, 18446744073709551615ull, 1.0 / 3.0, 0.0}};
  const std::string text = csv_of(recs);
  EXPECT_EQ(text.substr(0, text.find('\n')), kAsrCsvHeader);
  std::istringstream is(text);
  const auto back = read_asr_csv(is);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(back[i].same_outcome(recs[i]));
    EXPECT_NEAR(back[i].runtime_seconds, recs[i].runtime_seconds, 1e-6);
  }
}

TEST(AsrCsv, MalformedRowsRejected) {
  std::istringstream wrong_header("a,b\n");
  EXPECT_THROW(read_asr_csv(wrong_header), ParseError);
  std::istringstream short_row(std::string(kAsrCsvHeader) + "\ncora,1,2\n");
  try {
    read_asr_csv(short_row);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Summaries, MatchIndependentRecomputation) {
  std::vector<AsrRecord> recs;
  const double values[2][3] = {{0.5, 0.7, 0.9}, {0.2, 0.2, 0.2}};
  for (ClassId c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 3; ++r) recs.push_back({"cora", c, 3, 6, 20, r, 0, values[c][r], 0.0});
  recs.push_back({"cora", 0, 1, 2, 20, 0, 0, 0.4, 0.0});
  const auto cells = summarize(recs);
  ASSERT_EQ(cells.size(), 3u);
  // ascending key order: (0,1,20), (0,3,20), (1,3,20)
  EXPECT_EQ(cells[0].n_attack, 1u);
  EXPECT_EQ(cells[0].asr.count, 1u);
  EXPECT_EQ(cells[0].asr.stddev, 0.0);
  EXPECT_NEAR(cells[1].asr.mean, 0.7, 1e-15);
  EXPECT_NEAR(cells[1].asr.stddev, std::sqrt((0.04 + 0.0 + 0.04) / 3.0), 1e-15);
  EXPECT_NEAR(cells[2].asr.stddev, 0.0, 1e-15);
  const auto avg = class_averaged(cells);
  EXPECT_NEAR(avg.at({3, 20}), (0.7 + 0.2) / 2.0, 1e-15);
  EXPECT_NEAR(avg.at({1, 20}), 0.4, 1e-15);
  std::ostringstream os;
  write_summary_csv(os, cells);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), kSummaryCsvHeader);
}

TEST(MeanStd, EmptyAndSingle) {
  EXPECT_EQ(mean_std(std::vector<double>{}).count, 0u);
  const MeanStd one = mean_std(std::vector<double>{0.25});
  EXPECT_EQ(one.mean, 0.25);
  EXPECT_EQ(one.stddev, 0.0);
}

TEST(BenchSubgraph, EquivalencePrecheckPasses) {
  const Fixture& f = fixture();
  BenchConfig cfg{.target_class = 1, .num_attack_nodes = 2, .fake_per_attack = 2, .num_ancillary = 4,
                  .random_bits = 6, .rounds = 1, .seed = 3};
  const BenchReport rep = bench_subgraph(f.graph, f.params, cfg);
  EXPECT_EQ(rep.evaluations, 4u);
  EXPECT_LE(rep.max_grad_diff, 1e-9);
  EXPECT_LE(rep.max_forward_diff, 1e-9);
  EXPECT_EQ(rep.total_nodes, 64u);
  EXPECT_GT(rep.mean_subgraph_nodes, 0.0);
  cfg.rounds = 0;
  EXPECT_THROW(bench_subgraph(f.graph, f.params, cfg), ConfigError);
}

TEST(TrainRecipe, UsesSplitSeedAndIsDeterministic) {
  const Fixture& f = fixture();
  TrainRecipe recipe;
  recipe.per_class_train = 5;
  recipe.val_size = 10;
  recipe.test_size = 20;
  recipe.seed = 9;
  recipe.config.epochs = 20;
  const TrainedModel a = train_with_recipe(*f.graph, recipe);
  const TrainedModel b = train_with_recipe(*f.graph, recipe);
  EXPECT_EQ(a.outcome.params, b.outcome.params);
  EXPECT_EQ(a.split.train, make_split(*f.graph, 5, 10, 20, split_seed(9)).train);
  EXPECT_EQ(a.split.train.size(), 15u);
}
