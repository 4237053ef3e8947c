#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dense_reference.hpp"
#include "generators.hpp"
#include "tua/tua.hpp"

using namespace tua;

namespace {

// Two cliques of 6 joined by one edge; class = clique, features identify the clique.
Graph two_communities() {
  std::vector<Edge> edges;
  for (NodeId base : {0u, 6u})
    for (NodeId u = base; u < base + 6; ++u)
      for (NodeId v = u + 1; v < base + 6; ++v) edges.push_back({u, v});
  edges.push_back({5, 6});
  std::vector<std::vector<std::size_t>> rows;
  std::vector<ClassId> labels;
  for (NodeId v = 0; v < 12; ++v) {
    const std::size_t c = v < 6 ? 0 : 1;
    rows.push_back({c * 2, c * 2 + 1});
    labels.push_back(c);
  }
  return Graph(4, 2, std::move(edges), std::move(rows), std::move(labels));
}

TrainConfig config_for(const Graph& g) {
  TrainConfig cfg;
  cfg.hidden_dim = 8;
  cfg.epochs = 100;
  cfg.dropout_rate = 0.0;
  cfg.seed = 3;
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    (v % 3 == 0 ? cfg.train_nodes : cfg.test_nodes).push_back(v);
  return cfg;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveUniformRows) {
  const Graph g = gen::random_graph(1, {.nodes = 10, .features = 5, .classes = 3});
  const GcnParams p{Matrix(5, 4), Matrix(4, 3)};
  const ProbMatrix probs = forward(normalize(g), g.features(), p);
  for (NodeId v = 0; v < 10; ++v)
    for (ClassId c = 0; c < 3; ++c) EXPECT_NEAR(probs(v, c), 1.0 / 3.0, 1e-15);
}

TEST(Forward, IsolatedNodeDependsOnlyOnItsOwnFeatures) {
  // Node 2 is isolated: logits = relu(x W0) W1 with self weight 1.
  const Graph g(2, 2, {{0, 1}}, {{0}, {1}, {0, 1}}, {0, 1, 0});
  const GcnParams p{Matrix{{1.0, -1.0}, {2.0, 0.5}}, Matrix{{1.0, 0.0}, {0.0, 1.0}}};
  const ProbMatrix probs = forward(normalize(g), g.features(), p);
  // x~ = [0.5, 0.5] -> pre = [1.5, -0.25] -> hidden [1.5, 0] -> logits [1.5, 0]
  const double e = std::exp(1.5);
  EXPECT_NEAR(probs(2, 0), e / (e + 1.0), 1e-15);
}

TEST(ForwardProperty, MatchesDenseOracleAndRowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = gen::random_graph(seed, {.nodes = 8 + seed, .features = 5, .classes = 3});
    const GcnParams p = gen::random_params(seed + 100, 5, 4, 3);
    const ProbMatrix probs = forward(normalize(g), g.features(), p);
    const dense::Mat ref =
        dense::forward(dense::normalized(dense::adjacency(g.num_nodes(), gen::dense_edges(g))),
                       gen::dense_features(g), gen::to_dense(p));
    EXPECT_LT(gen::max_abs_diff(gen::to_dense(probs.values()), ref), 1e-12);
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
      double sum = 0.0;
      for (ClassId c = 0; c < 3; ++c) {
        EXPECT_GE(probs(v, c), 0.0);
        sum += probs(v, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Forward, DimensionMismatchRejected) {
  const Graph g = gen::random_graph(2, {.nodes = 6, .features = 4});
  const GcnParams p{Matrix(5, 3), Matrix(3, 2)};
  EXPECT_THROW(forward(normalize(g), g.features(), p), ValidationError);
  const GcnParams bad{Matrix(4, 3), Matrix(2, 2)};
  EXPECT_THROW(forward(normalize(g), g.features(), bad), ValidationError);
}

TEST(Predict, ArgmaxAndLowestIndexOnTies) {
  const std::vector<double> row{0.1, 0.7, 0.2};
  EXPECT_EQ(argmax(row), 1u);
  const std::vector<double> tie{0.4, 0.2, 0.4};
  EXPECT_EQ(argmax(tie), 0u);
}

TEST(TargetedObjective, Examples) {
  const std::vector<double> row{0.1, 0.7, 0.2};
  const ObjectiveValue o = targeted_objective(row, 2);
  EXPECT_NEAR(o.value, -0.5, 1e-15);
  EXPECT_EQ(o.current_class, 1u);
  EXPECT_EQ(targeted_objective(row, 1).value, 0.0);
  EXPECT_THROW(targeted_objective(row, 3), ValidationError);
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  const Graph g = two_communities();
  const TrainOutcome out = train_model(g, config_for(g));
  EXPECT_DOUBLE_EQ(out.train_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(out.test_accuracy, 1.0);
  EXPECT_EQ(out.history.size(), 100u);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const Graph g = two_communities();
  TrainConfig cfg = config_for(g);
  cfg.epochs = 0;
  Rng rng(cfg.seed);
  const GcnParams init = glorot_init(4, 8, 2, rng);
  const TrainOutcome out = train_model(g, cfg);
  EXPECT_EQ(out.params, init);
  EXPECT_EQ(out.best_epoch, 0u);
}

TEST(Train, SameSeedIsBitIdentical) {
  const Graph g = gen::random_graph(4, {.nodes = 30, .features = 8, .classes = 3});
  TrainConfig cfg = config_for(g);
  cfg.dropout_rate = 0.5;
  cfg.epochs = 30;
  for (NodeId v = 1; v < 30; v += 3) cfg.val_nodes.push_back(v);
  std::erase_if(cfg.test_nodes, [](NodeId v) { return v % 3 == 1; });
  const TrainOutcome a = train_model(g, cfg);
  const TrainOutcome b = train_model(g, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  cfg.seed += 1;
  EXPECT_NE(train_model(g, cfg).params, a.params);
}

TEST(Train, ConfigErrors) {
  const Graph g = two_communities();
  TrainConfig cfg = config_for(g);
  cfg.train_nodes.clear();
  EXPECT_THROW(train_model(g, cfg), ConfigError);
  cfg = config_for(g);
  cfg.test_nodes.push_back(0);
  EXPECT_THROW(train_model(g, cfg), ConfigError);
  cfg = config_for(g);
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(train_model(g, cfg), ConfigError);
}

TEST(TrainingGradient, MatchesCentralDifference) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = gen::random_graph(seed, {.nodes = 10, .features = 4, .classes = 3});
    const NormalizedAdjacency adj = normalize(g);
    GcnParams p = gen::random_params(seed + 7, 4, 3, 3);
    const std::vector<NodeId> nodes{0, 2, 5, 7};
    const double wd = 0.01;
    const LossAndGrad lg = training_loss_and_grad(adj, g.features(), p, g.labels(), nodes, wd);
    auto loss_at = [&](const GcnParams& q) {
      return training_loss_and_grad(adj, g.features(), q, g.labels(), nodes, wd).loss;
    };
    const double h = 1e-6;
    for (int layer = 0; layer < 2; ++layer) {
      Matrix& w = layer == 0 ? p.w0 : p.w1;
      const Matrix& analytic = layer == 0 ? lg.d_w0 : lg.d_w1;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double orig = w.data()[k];
        w.data()[k] = orig + h;
        const double up = loss_at(p);
        w.data()[k] = orig - h;
        const double down = loss_at(p);
        w.data()[k] = orig;
        EXPECT_NEAR(analytic.data()[k], (up - down) / (2 * h), 1e-6) << "layer " << layer << " k " << k;
      }
    }
  }
}

TEST(ObjectiveGradient, MatchesDenseOracleAndFiniteDifference) {
  // 8 nodes with continuous rows so the mass stays clear of 1.
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Graph g = gen::random_graph(seed, {.nodes = 8, .features = 4, .classes = 3, .edge_prob = 0.4});
    const GcnParams p = gen::random_params(seed + 50, 4, 5, 3, 1.5);
    dense::Mat x = gen::dense_features(g);
    Rng rng(seed);
    for (auto& row : x)
      for (double& v : row) v = v > 0 ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.2);
    const SparseRows xs = gen::rows_of(x);
    const NormalizedAdjacency adj = normalize(g);
    const dense::Mat ahat = dense::normalized(dense::adjacency(8, gen::dense_edges(g)));
    const NodeId v = 0;
    const ClassId pred = argmax(forward(adj, xs, p).row(v));
    const ClassId target = (pred + 1) % 3;
    std::vector<NodeId> rows(8);
    for (NodeId r = 0; r < 8; ++r) rows[r] = r;
    const ObjectiveGradient og = objective_gradient(adj, xs, p, v, target, rows);
    const dense::Mat ref = dense::objective_gradient(ahat, x, gen::to_dense(p), v, target);
    EXPECT_LT(gen::max_abs_diff(gen::to_dense(og.grad), ref), 1e-12);
    auto f = [&](const dense::Mat& xx) {
      return dense::objective_row(dense::forward(ahat, xx, gen::to_dense(p))[v], target);
    };
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double fd = dense::central_difference(f, x, i, j, 1e-6);
        EXPECT_NEAR(og.grad(i, j), fd, 1e-6 * std::max(1.0, std::abs(fd))) << i << "," << j;
      }
  }
}

TEST(ObjectiveGradient, ZeroBeyondTwoHops) {
  // Path 0-1-2-3-4: rows 3 and 4 are outside the 2-hop ball of 0.
  const Graph g(3, 2, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, {{0}, {1}, {2}, {0, 1}, {1, 2}}, {0, 1, 0, 1, 0});
  const GcnParams p = gen::random_params(9, 3, 4, 2, 2.0);
  const NormalizedAdjacency adj = normalize(g);
  const ClassId target = 1 - argmax(forward(adj, g.features(), p).row(0));
  const std::vector<NodeId> rows{0, 1, 2, 3, 4};
  const ObjectiveGradient og = objective_gradient(adj, g.features(), p, 0, target, rows);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(og.grad(3, j), 0.0);
    EXPECT_EQ(og.grad(4, j), 0.0);
  }
}

TEST(ObjectiveGradient, ZeroWhenAlreadyPredictedAsTarget) {
  const Graph g = gen::random_graph(5, {.nodes = 8, .features = 4, .classes = 3});
  const GcnParams p = gen::random_params(6, 4, 4, 3);
  const NormalizedAdjacency adj = normalize(g);
  const ClassId pred = argmax(forward(adj, g.features(), p).row(2));
  const std::vector<NodeId> rows{0, 1, 2};
  const ObjectiveGradient og = objective_gradient(adj, g.features(), p, 2, pred, rows);
  EXPECT_EQ(og.value, 0.0);
  for (double x : og.grad.data()) EXPECT_EQ(x, 0.0);
}

TEST(Forward, IsolatedZeroFeatureNodeLeavesOtherRowsBitIdentical) {
  const auto g = std::make_shared<const Graph>(gen::random_graph(8, {.nodes = 10, .features = 4}));
  const GcnParams p = gen::random_params(1, 4, 3, 2);
  const ProbMatrix base = forward(normalize(*g), g->features(), p);
  // A fake with no edges appended at the end: reuse SparseRows with one empty row.
  SparseRows x(4);
  for (NodeId v = 0; v < 10; ++v) {
    const SparseRowRef r = g->features().row(v);
    x.append_row(r.cols, r.values);
  }
  x.append_row({}, {});
  const ProbMatrix extended = forward(normalize(11, g->edges()), x, p);
  for (NodeId v = 0; v < 10; ++v)
    for (ClassId c = 0; c < 2; ++c) EXPECT_EQ(extended(v, c), base(v, c));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const GcnParams p = gen::random_params(11, 5, 3, 4);
  std::stringstream ss;
  write_checkpoint(ss, p);
  EXPECT_EQ(ss.str().size(), 8u + 24u + 8u * (15 + 12));
  EXPECT_EQ(read_checkpoint(ss), p);
}

TEST(Checkpoint, CorruptInputsRejected) {
  const GcnParams p = gen::random_params(12, 3, 2, 2);
  std::stringstream ss;
  write_checkpoint(ss, p);
  const std::string good = ss.str();

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::istringstream a(bad_magic);
  EXPECT_THROW(read_checkpoint(a), ParseError);

  std::istringstream b(good.substr(0, good.size() - 3));
  EXPECT_THROW(read_checkpoint(b), ParseError);

  std::istringstream c(good + "z");
  EXPECT_THROW(read_checkpoint(c), ParseError);

  EXPECT_THROW(load_checkpoint("/nonexistent/model.bin"), IoError);
}

TEST(Checkpoint, DimensionMismatchDetected) {
  const GcnParams p = gen::random_params(13, 3, 2, 2);
  EXPECT_NO_THROW(p.validate_for(3, 2));
  EXPECT_THROW(p.validate_for(4, 2), ValidationError);
  EXPECT_THROW(p.validate_for(3, 3), ValidationError);
}
