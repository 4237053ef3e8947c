#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "tua/attack.hpp"
#include "tua/dataio.hpp"
#include "tua/error.hpp"
#include "tua/gcn.hpp"
#include "tua/graph.hpp"
#include "tua/rng.hpp"
#include "tua/subgraph.hpp"

namespace tua {

// ---------------------------------------------------------------------------
// Training with the standard split recipe.
// ---------------------------------------------------------------------------

struct TrainRecipe {
  std::size_t per_class_train = 20;
  std::size_t val_size = 500;
  std::size_t test_size = 1000;
  std::uint64_t seed = 42;  // drives both the split and the trainer
  TrainConfig config;       // masks are filled from the split
};

struct TrainedModel {
  SplitMasks split;
  TrainOutcome outcome;
};

inline std::uint64_t split_seed(std::uint64_t seed) noexcept { return combine_seed(seed, 11); }
inline std::uint64_t trainer_seed(std::uint64_t seed) noexcept { return combine_seed(seed, 12); }

inline TrainedModel train_with_recipe(const Graph& g, const TrainRecipe& recipe) {
  TrainedModel out;
  out.split = make_split(g, recipe.per_class_train, recipe.val_size, recipe.test_size,
                         split_seed(recipe.seed));
  TrainConfig cfg = recipe.config;
  cfg.train_nodes = out.split.train;
  cfg.val_nodes = out.split.val;
  cfg.test_nodes = out.split.test;
  cfg.seed = trainer_seed(recipe.seed);
  out.outcome = train_model(g, cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Plans and records.
// ---------------------------------------------------------------------------

struct ExperimentPlan {
  std::string dataset;
  std::vector<ClassId> classes;  // empty = every class of the graph
  std::vector<std::size_t> attack_node_counts{3};
  std::vector<std::size_t> ancillary_counts{20};
  std::size_t fake_per_attack = 2;
  std::size_t repetitions = 3;
  std::size_t max_iters = 25;
  std::optional<std::size_t> budget;
  std::uint64_t base_seed = 0;
  std::size_t threads = 1;
  bool record_timing = true;

  static constexpr std::size_t kFullGridRepetitions = 10;

  void validate() const {
    if (dataset.empty()) throw ConfigError("ExperimentPlan: dataset name required");
    if (attack_node_counts.empty() || ancillary_counts.empty())
      throw ConfigError("ExperimentPlan: empty count list");
    for (std::size_t c : attack_node_counts)
      if (c == 0) throw ConfigError("ExperimentPlan: attack node counts must be >= 1");
    for (std::size_t c : ancillary_counts)
      if (c == 0) throw ConfigError("ExperimentPlan: ancillary counts must be >= 1");
    if (fake_per_attack == 0) throw ConfigError("ExperimentPlan: fake_per_attack must be >= 1");
    if (repetitions == 0) throw ConfigError("ExperimentPlan: repetitions must be >= 1");
  }

  std::vector<ClassId> resolved_classes(const Graph& g) const {
    if (!classes.empty()) {
      for (ClassId c : classes)
        if (c >= g.num_classes())
          throw ConfigError("ExperimentPlan: class " + std::to_string(c) + " does not exist");
      return classes;
    }
    std::vector<ClassId> all(g.num_classes());
    for (ClassId c = 0; c < all.size(); ++c) all[c] = c;
    return all;
  }
};

struct AsrRecord {
  std::string dataset;
  ClassId class_id = 0;
  std::size_t n_attack = 0;
  std::size_t n_fake = 0;
  std::size_t n_ancillary = 0;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  double asr = 0.0;
  double runtime_seconds = 0.0;

  bool same_outcome(const AsrRecord& o) const {
    return dataset == o.dataset && class_id == o.class_id && n_attack == o.n_attack &&
           n_fake == o.n_fake && n_ancillary == o.n_ancillary && repetition == o.repetition &&
           seed == o.seed && asr == o.asr;
  }
};

struct Cell {
  ClassId class_id = 0;
  std::size_t n_attack = 0;
  std::size_t n_ancillary = 0;
  std::size_t repetition = 0;
};

inline std::uint64_t cell_seed(std::uint64_t base_seed, std::string_view dataset, ClassId class_id,
                               std::size_t n_attack, std::size_t n_ancillary,
                               std::size_t repetition) noexcept {
  std::uint64_t s = combine_seed(base_seed, hash_string(dataset));
  s = combine_seed(s, class_id);
  s = combine_seed(s, n_attack);
  s = combine_seed(s, n_ancillary);
  return combine_seed(s, repetition);
}

/// Cells in output order: class, then attack count, then ancillary count, then repetition.
inline std::vector<Cell> plan_cells(const ExperimentPlan& plan, const Graph& g) {
  plan.validate();
  std::vector<Cell> cells;
  for (ClassId c : plan.resolved_classes(g))
    for (std::size_t na : plan.attack_node_counts)
      for (std::size_t nt : plan.ancillary_counts)
        for (std::size_t r = 0; r < plan.repetitions; ++r) cells.push_back(Cell{c, na, nt, r});
  return cells;
}

inline AttackConfig cell_config(const ExperimentPlan& plan, const Cell& cell, std::uint64_t seed) {
  AttackConfig cfg;
  cfg.target_class = cell.class_id;
  cfg.num_attack_nodes = cell.n_attack;
  cfg.fake_per_attack = plan.fake_per_attack;
  cfg.num_ancillary = cell.n_ancillary;
  cfg.max_iters = plan.max_iters;
  cfg.budget = plan.budget;
  cfg.seed = seed;
  return cfg;
}

struct CellOutcome {
  AsrRecord record;
  AttackResult result;
};

/// Runs one attack and scores it on every eligible victim of the graph.
inline CellOutcome run_cell_with_nodes(const std::shared_ptr<const Graph>& graph,
                                       const GcnParams& params, const ExperimentPlan& plan,
                                       const Cell& cell, std::uint64_t seed,
                                       std::span<const NodeId> attack,
                                       std::span<const NodeId> ancillary) {
  const auto start = std::chrono::steady_clock::now();
  const AttackConfig cfg = cell_config(plan, cell, seed);
  AttackResult result = run_attack(graph, params, cfg, attack, ancillary);
  const auto victims = eligible_test_nodes(result);
  const double asr = evaluate_asr(params, result, victims);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  AsrRecord rec{plan.dataset,     cell.class_id,   cell.n_attack, cfg.num_fake(),
                cell.n_ancillary, cell.repetition, seed,          asr,
                plan.record_timing ? seconds : 0.0};
  return CellOutcome{std::move(rec), std::move(result)};
}

inline CellOutcome run_cell(const std::shared_ptr<const Graph>& graph, const GcnParams& params,
                            const ExperimentPlan& plan, const Cell& cell) {
  const std::uint64_t seed = cell_seed(plan.base_seed, plan.dataset, cell.class_id, cell.n_attack,
                                       cell.n_ancillary, cell.repetition);
  const auto attack = select_attack_nodes(*graph, cell.class_id, cell.n_attack, attack_node_seed(seed));
  const auto ancillary =
      select_ancillary_nodes(*graph, cell.class_id, cell.n_ancillary, ancillary_seed(seed), attack);
  return run_cell_with_nodes(graph, params, plan, cell, seed, attack, ancillary);
}

// ---------------------------------------------------------------------------
// Worker pool.
// ---------------------------------------------------------------------------

/// Calls fn(i) for i in [0, n) on up to `threads` workers. The first exception thrown
/// by any task is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total, const AsrRecord&)>;

/// Runs every cell of the plan. Records come back in plan_cells order regardless of
/// thread count.
inline std::vector<AsrRecord> run_plan(const std::shared_ptr<const Graph>& graph,
                                       const GcnParams& params, const ExperimentPlan& plan,
                                       const ProgressFn& progress = {}) {
  params.validate_for(graph->num_features(), graph->num_classes());
  const auto cells = plan_cells(plan, *graph);
  std::vector<AsrRecord> records(cells.size());
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(cells.size(), plan.threads, [&](std::size_t i) {
    records[i] = run_cell(graph, params, plan, cells[i]).record;
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(++done, cells.size(), records[i]);
    }
  });
  return records;
}

// ---------------------------------------------------------------------------
// Fluctuation: fixed attack nodes, resampled ancillary sets.
// ---------------------------------------------------------------------------

/// Seed of fluctuation repetition r: the attack nodes come from attack_node_seed(seed) of
/// the shared plan seed, the ancillary set from fluctuation_ancillary_seed(seed, r).
inline std::uint64_t fluctuation_ancillary_seed(std::uint64_t seed, std::size_t repetition) noexcept {
  return combine_seed(ancillary_seed(seed), repetition);
}

inline std::vector<AsrRecord> run_fluctuation(const std::shared_ptr<const Graph>& graph,
                                              const GcnParams& params, const ExperimentPlan& plan,
                                              const ProgressFn& progress = {}) {
  params.validate_for(graph->num_features(), graph->num_classes());
  plan.validate();
  const auto classes = plan.resolved_classes(*graph);
  std::vector<Cell> cells;
  for (ClassId c : classes)
    for (std::size_t na : plan.attack_node_counts)
      for (std::size_t nt : plan.ancillary_counts)
        for (std::size_t r = 0; r < plan.repetitions; ++r) cells.push_back(Cell{c, na, nt, r});
  std::vector<AsrRecord> records(cells.size());
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(cells.size(), plan.threads, [&](std::size_t i) {
    const Cell& cell = cells[i];
    const std::uint64_t seed =
        cell_seed(plan.base_seed, plan.dataset, cell.class_id, cell.n_attack, cell.n_ancillary, 0);
    const auto attack =
        select_attack_nodes(*graph, cell.class_id, cell.n_attack, attack_node_seed(seed));
    const auto ancillary = select_ancillary_nodes(*graph, cell.class_id, cell.n_ancillary,
                                                  fluctuation_ancillary_seed(seed, cell.repetition),
                                                  attack);
    records[i] = run_cell_with_nodes(graph, params, plan, cell, seed, attack, ancillary).record;
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(++done, cells.size(), records[i]);
    }
  });
  return records;
}

// ---------------------------------------------------------------------------
// CSV.
// ---------------------------------------------------------------------------

inline constexpr const char* kAsrCsvHeader =
    "dataset,class_id,n_attack,n_fake,n_ancillary,repetition,seed,asr,runtime_seconds";

inline std::string format_double(double x, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, x);
  return buf;
}

inline void write_asr_csv(std::ostream& os, std::span<const AsrRecord> records) {
  os << kAsrCsvHeader << '\n';
  for (const AsrRecord& r : records) {
    char runtime[32];
    std::snprintf(runtime, sizeof runtime, "%.6f", r.runtime_seconds);
    os << r.dataset << ',' << r.class_id << ',' << r.n_attack << ',' << r.n_fake << ','
       << r.n_ancillary << ',' << r.repetition << ',' << r.seed << ',' << format_double(r.asr)
       << ',' << runtime << '\n';
  }
}

inline std::vector<AsrRecord> read_asr_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::trim_cr(line) != kAsrCsvHeader)
    throw ParseError("asr csv: unexpected header", 1);
  std::vector<AsrRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim_cr(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw ParseError("asr csv: expected 9 fields", line_no);
    try {
      AsrRecord r;
      r.dataset = f[0];
      r.class_id = std::stoull(f[1]);
      r.n_attack = std::stoull(f[2]);
      r.n_fake = std::stoull(f[3]);
      r.n_ancillary = std::stoull(f[4]);
      r.repetition = std::stoull(f[5]);
      r.seed = std::stoull(f[6]);
      r.asr = std::stod(f[7]);
      r.runtime_seconds = std::stod(f[8]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError("asr csv: bad numeric field", line_no);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation.
// ---------------------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  out.count = xs.size();
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - out.mean) * (x - out.mean);
  out.stddev = std::sqrt(sq / static_cast<double>(xs.size()));
  return out;
}

struct CellSummary {
  std::string dataset;
  ClassId class_id = 0;
  std::size_t n_attack = 0;
  std::size_t n_ancillary = 0;
  MeanStd asr;
};

/// Mean and standard deviation over repetitions for each (class, n_attack, n_ancillary),
/// in ascending key order.
inline std::vector<CellSummary> summarize(std::span<const AsrRecord> records) {
  std::map<std::tuple<std::string, ClassId, std::size_t, std::size_t>, std::vector<double>> groups;
  for (const AsrRecord& r : records)
    groups[{r.dataset, r.class_id, r.n_attack, r.n_ancillary}].push_back(r.asr);
  std::vector<CellSummary> out;
  for (const auto& [key, xs] : groups)
    out.push_back(CellSummary{std::get<0>(key), std::get<1>(key), std::get<2>(key),
                              std::get<3>(key), mean_std(xs)});
  return out;
}

/// Average of the per-class means for each (n_attack, n_ancillary).
inline std::map<std::pair<std::size_t, std::size_t>, double> class_averaged(
    std::span<const CellSummary> cells) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> groups;
  for (const CellSummary& c : cells) groups[{c.n_attack, c.n_ancillary}].push_back(c.asr.mean);
  std::map<std::pair<std::size_t, std::size_t>, double> out;
  for (const auto& [key, xs] : groups) out[key] = mean_std(xs).mean;
  return out;
}

inline constexpr const char* kSummaryCsvHeader =
    "dataset,class_id,n_attack,n_ancillary,repetitions,mean_asr,std_asr";

inline void write_summary_csv(std::ostream& os, std::span<const CellSummary> cells) {
  os << kSummaryCsvHeader << '\n';
  for (const CellSummary& c : cells)
    os << c.dataset << ',' << c.class_id << ',' << c.n_attack << ',' << c.n_ancillary << ','
       << c.asr.count << ',' << format_double(c.asr.mean) << ',' << format_double(c.asr.stddev)
       << '\n';
}

// ---------------------------------------------------------------------------
// Subgraph benchmark.
// ---------------------------------------------------------------------------

struct BenchConfig {
  ClassId target_class = 0;
  std::size_t num_attack_nodes = 3;
  std::size_t fake_per_attack = 2;
  std::size_t num_ancillary = 20;
  std::size_t random_bits = 25;  // fake bits set before timing, so fake rows are non-trivial
  std::size_t rounds = 5;        // each round evaluates every ancillary gradient once per path
  std::uint64_t seed = 0;
  double tolerance = 1e-9;
};

struct BenchReport {
  std::size_t evaluations = 0;  // gradient evaluations per path
  double full_seconds = 0.0;
  double subgraph_seconds = 0.0;  // extraction + gradient
  double extraction_seconds = 0.0;
  double subgraph_gradient_seconds = 0.0;
  double max_grad_diff = 0.0;
  double max_forward_diff = 0.0;
  double mean_subgraph_nodes = 0.0;
  std::size_t total_nodes = 0;

  double full_rate() const { return static_cast<double>(evaluations) / full_seconds; }
  double subgraph_rate() const { return static_cast<double>(evaluations) / subgraph_seconds; }
  double speedup() const { return full_seconds / subgraph_seconds; }
  double gradient_only_speedup() const { return full_seconds / subgraph_gradient_seconds; }
};

/// Setting for the benchmark: attack nodes, ancillary nodes and a fake block with some
/// random bits set, all drawn from cfg.seed.
inline AttackResult bench_setup(const std::shared_ptr<const Graph>& graph, const BenchConfig& cfg) {
  const auto attack = select_attack_nodes(*graph, cfg.target_class, cfg.num_attack_nodes,
                                          attack_node_seed(cfg.seed));
  const auto ancillary = select_ancillary_nodes(*graph, cfg.target_class, cfg.num_ancillary,
                                                ancillary_seed(cfg.seed), attack);
  AttackResult setup{inject_fake_nodes(graph, attack, cfg.fake_per_attack), ancillary, {}, 0.0,
                     StopReason::completed};
  Rng rng(combine_seed(cfg.seed, 3));
  const std::size_t d = graph->num_features();
  for (std::size_t k = 0; k < cfg.random_bits; ++k)
    setup.perturbed.set_fake_bit(rng.uniform_index(setup.perturbed.num_fake()), rng.uniform_index(d));
  return setup;
}

/// Checks that both gradient paths agree to cfg.tolerance, then times them. Throws
/// Error when the paths disagree.
inline BenchReport bench_subgraph(const std::shared_ptr<const Graph>& graph,
                                  const GcnParams& params, const BenchConfig& cfg) {
  if (cfg.rounds == 0) throw ConfigError("bench_subgraph: rounds must be >= 1");
  params.validate_for(graph->num_features(), graph->num_classes());
  const AttackResult setup = bench_setup(graph, cfg);
  const PerturbedGraph& pg = setup.perturbed;
  const auto& ancillary = setup.ancillary_nodes;
  const auto features = pg.features();
  using clock = std::chrono::steady_clock;

  BenchReport rep;
  rep.total_nodes = pg.total_nodes();
  {
    VictimSubgraphBuilder builder(pg);
    std::size_t nodes = 0;
    for (NodeId v : ancillary) {
      const SubgraphView view = builder.build(v);
      nodes += view.size();
      const ObjectiveGradient sub =
          objective_gradient_on_subgraph(view, features, params, v, pg.target_class());
      const ObjectiveGradient full = full_graph_objective_gradient(pg, params, v);
      rep.max_grad_diff = std::max(rep.max_grad_diff, max_abs_diff(sub.grad, full.grad));
      const auto row_sub = forward_on_subgraph(view, features, params, v);
      const PerturbedGraph linked = link_victim(pg, v);
      const ProbMatrix probs = forward(linked.normalized(), linked.features(), params);
      for (std::size_t k = 0; k < row_sub.size(); ++k)
        rep.max_forward_diff = std::max(rep.max_forward_diff, std::abs(row_sub[k] - probs.row(v)[k]));
    }
    rep.mean_subgraph_nodes = static_cast<double>(nodes) / static_cast<double>(ancillary.size());
  }
  if (!(rep.max_grad_diff < cfg.tolerance) || !(rep.max_forward_diff < cfg.tolerance))
    throw Error("bench_subgraph: subgraph and full-graph paths disagree (grad " +
                format_double(rep.max_grad_diff, 3) + ", forward " +
                format_double(rep.max_forward_diff, 3) + ")");

  rep.evaluations = cfg.rounds * ancillary.size();
  double sink = 0.0;
  auto t0 = clock::now();
  for (std::size_t r = 0; r < cfg.rounds; ++r)
    for (NodeId v : ancillary) sink += full_graph_objective_gradient(pg, params, v).value;
  rep.full_seconds = std::chrono::duration<double>(clock::now() - t0).count();

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    VictimSubgraphBuilder builder(pg);
    for (NodeId v : ancillary) {
      const auto t1 = clock::now();
      const SubgraphView view = builder.build(v);
      const auto t2 = clock::now();
      sink += objective_gradient_on_subgraph(view, features, params, v, pg.target_class()).value;
      const auto t3 = clock::now();
      rep.extraction_seconds += std::chrono::duration<double>(t2 - t1).count();
      rep.subgraph_gradient_seconds += std::chrono::duration<double>(t3 - t2).count();
    }
  }
  rep.subgraph_seconds = rep.extraction_seconds + rep.subgraph_gradient_seconds;
  if (!std::isfinite(sink)) throw Error("bench_subgraph: non-finite objective");
  return rep;
}

}  // namespace tua
