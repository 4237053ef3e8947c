// Command-line front end: training, single attacks, experiment sweeps, the subgraph
// benchmark and dataset conversion.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tua/tua.hpp"

#ifndef TUA_DEFAULT_DATA_DIR
#define TUA_DEFAULT_DATA_DIR "data"
#endif

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for problems with the user's inputs (maps to exit code 2).
struct UsageError : tua::Error {
  using tua::Error::Error;
};

struct Options {
  std::string dataset;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_flag;
  std::string out;
  std::string summary_out;
  std::optional<std::size_t> target_class;
  std::optional<std::size_t> attack_nodes;
  std::size_t fake_per_attack = 2;
  std::optional<std::size_t> ancillary;
  std::size_t iters = 25;
  std::optional<std::size_t> budget;
  bool full_grid = false;
  std::optional<std::size_t> reps;
  std::size_t threads = 1;
  bool no_timing = false;
  bool quiet = false;
  // train
  std::size_t epochs = 200;
  std::size_t hidden = 16;
  // bench
  std::size_t rounds = 5;
};

std::string data_dir() {
  if (const char* env = std::getenv("TUA_DATA_DIR"); env && *env) return env;
  return TUA_DEFAULT_DATA_DIR;
}

tua::LoadedDataset load_dataset_or_usage(const Options& o) {
  if (o.dataset.empty()) throw UsageError("--dataset is required");
  tua::LoadedDataset ds = [&] {
    try {
      return tua::load_dataset(o.dataset, data_dir());
    } catch (const tua::IoError& e) {
      throw UsageError(e.what());
    }
  }();
  ds.validate();
  return ds;
}

tua::GcnParams load_checkpoint_or_usage(const Options& o, const tua::Graph& g) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  tua::GcnParams p = [&] {
    try {
      return tua::load_checkpoint(o.checkpoint);
    } catch (const tua::IoError& e) {
      throw UsageError(e.what());
    }
  }();
  p.validate_for(g.num_features(), g.num_classes());
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw tua::IoError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw tua::IoError("failed writing " + path);
}

void describe(const tua::LoadedDataset& ds, bool quiet) {
  if (quiet) return;
  const tua::Graph& g = ds.graph;
  std::fprintf(stderr, "dataset %s: %zu nodes, %zu edges, %zu features, %zu classes\n",
               ds.name.c_str(), g.num_nodes(), g.num_edges(), g.num_features(), g.num_classes());
  if (ds.report && (ds.report->unknown_id_edges || ds.report->binarized_entries))
    std::fprintf(stderr, "  dropped %zu citations with unknown ids, binarized %zu entries\n",
                 ds.report->unknown_id_edges, ds.report->binarized_entries);
}

// ---------------------------------------------------------------------------

int cmd_train(const Options& o) {
  const auto ds = load_dataset_or_usage(o);
  describe(ds, o.quiet);
  const std::string out = o.out.empty() ? o.checkpoint : o.out;
  if (out.empty()) throw UsageError("train needs --out (or --checkpoint) for the checkpoint path");
  tua::TrainRecipe recipe;
  recipe.seed = o.seed_flag.value_or(42);
  recipe.config.epochs = o.epochs;
  recipe.config.hidden_dim = o.hidden;
  const tua::TrainedModel model = tua::train_with_recipe(ds.graph, recipe);
  tua::save_checkpoint(out, model.outcome.params);
  std::printf("train_accuracy %.4f\nval_accuracy %.4f\ntest_accuracy %.4f\nbest_epoch %zu\n",
              model.outcome.train_accuracy, model.outcome.val_accuracy,
              model.outcome.test_accuracy, model.outcome.best_epoch);
  return kExitOk;
}

tua::AttackConfig attack_config(const Options& o) {
  tua::AttackConfig cfg;
  if (!o.target_class) throw UsageError("--target-class is required");
  cfg.target_class = *o.target_class;
  cfg.num_attack_nodes = o.attack_nodes.value_or(3);
  cfg.fake_per_attack = o.fake_per_attack;
  cfg.num_ancillary = o.ancillary.value_or(20);
  cfg.max_iters = o.iters;
  cfg.budget = o.budget;
  cfg.seed = o.seed;
  return cfg;
}

int cmd_attack(const Options& o) {
  auto ds = load_dataset_or_usage(o);
  describe(ds, o.quiet);
  const auto graph = std::make_shared<const tua::Graph>(std::move(ds.graph));
  const tua::GcnParams params = load_checkpoint_or_usage(o, *graph);
  const tua::AttackConfig cfg = attack_config(o);
  if (cfg.target_class >= graph->num_classes())
    throw tua::ConfigError("--target-class " + std::to_string(cfg.target_class) + " out of range");
  const tua::AttackResult result = tua::run_attack(graph, params, cfg);
  const auto victims = tua::eligible_test_nodes(result);
  const double asr = tua::evaluate_asr(params, result, victims);
  if (!o.out.empty()) tua::save_attack_result(result, o.out);
  std::printf("bits_set %zu\nstop_reason %s\nvictims %zu\nasr %.6f\n",
              result.perturbed.num_fake_bits_set(), tua::to_string(result.stop_reason),
              victims.size(), asr);
  return kExitOk;
}

tua::ExperimentPlan base_plan(const Options& o, const std::string& dataset_name) {
  tua::ExperimentPlan plan;
  plan.dataset = dataset_name;
  if (o.target_class) plan.classes = {*o.target_class};
  plan.fake_per_attack = o.fake_per_attack;
  plan.max_iters = o.iters;
  plan.budget = o.budget;
  plan.base_seed = o.seed;
  plan.threads = o.threads;
  plan.record_timing = !o.no_timing;
  plan.repetitions = o.reps.value_or(o.full_grid ? tua::ExperimentPlan::kFullGridRepetitions : 3);
  return plan;
}

tua::ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](std::size_t done, std::size_t total, const tua::AsrRecord& r) {
    std::fprintf(stderr, "[%zu/%zu] class %zu, %zu attack, %zu ancillary, rep %zu: asr %.4f\n", done,
                 total, r.class_id, r.n_attack, r.n_ancillary, r.repetition, r.asr);
  };
}

void emit_records(const Options& o, const std::vector<tua::AsrRecord>& records) {
  std::ostringstream csv;
  tua::write_asr_csv(csv, records);
  if (o.out.empty())
    std::cout << csv.str();
  else
    write_text(o.out, csv.str());
  const auto summary = tua::summarize(records);
  std::ostringstream sum;
  tua::write_summary_csv(sum, summary);
  if (!o.summary_out.empty())
    write_text(o.summary_out, sum.str());
  else if (!o.out.empty())
    std::cout << sum.str();
}

int run_sweep(const Options& o, bool vary_attack, bool fluctuation) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  Options one = o;
  if (one.dataset.empty()) one.dataset = "cora";
  auto ds = load_dataset_or_usage(one);
  describe(ds, o.quiet);
  const auto graph = std::make_shared<const tua::Graph>(std::move(ds.graph));
  const tua::GcnParams params = load_checkpoint_or_usage(one, *graph);

  tua::ExperimentPlan plan = base_plan(one, ds.name);
  if (fluctuation) {
    plan.attack_node_counts = {o.attack_nodes.value_or(3)};
    plan.ancillary_counts = {o.ancillary.value_or(20)};
    plan.repetitions = o.reps.value_or(10);
    emit_records(one, tua::run_fluctuation(graph, params, plan, progress_printer(o.quiet)));
    return kExitOk;
  }
  if (vary_attack) {
    plan.attack_node_counts = o.attack_nodes ? std::vector<std::size_t>{*o.attack_nodes}
                                             : std::vector<std::size_t>{1, 2, 3, 4};
    plan.ancillary_counts = {o.ancillary.value_or(20)};
  } else {
    plan.attack_node_counts = o.attack_nodes ? std::vector<std::size_t>{*o.attack_nodes}
                                             : std::vector<std::size_t>{1, 2, 3, 4};
    plan.ancillary_counts = o.ancillary ? std::vector<std::size_t>{*o.ancillary}
                                        : std::vector<std::size_t>{5, 10, 15, 20};
  }
  emit_records(one, tua::run_plan(graph, params, plan, progress_printer(o.quiet)));
  return kExitOk;
}

int cmd_bench(const Options& o) {
  auto ds = load_dataset_or_usage(o);
  describe(ds, o.quiet);
  const auto graph = std::make_shared<const tua::Graph>(std::move(ds.graph));
  const tua::GcnParams params = load_checkpoint_or_usage(o, *graph);
  tua::BenchConfig cfg;
  cfg.target_class = o.target_class.value_or(0);
  cfg.num_attack_nodes = o.attack_nodes.value_or(3);
  cfg.fake_per_attack = o.fake_per_attack;
  cfg.num_ancillary = o.ancillary.value_or(20);
  cfg.random_bits = o.iters;
  cfg.rounds = o.rounds;
  cfg.seed = o.seed;
  const tua::BenchReport r = tua::bench_subgraph(graph, params, cfg);
  std::ostringstream report;
  report << "evaluations " << r.evaluations << '\n'
         << "total_nodes " << r.total_nodes << '\n'
         << "mean_subgraph_nodes " << r.mean_subgraph_nodes << '\n'
         << "max_grad_diff " << r.max_grad_diff << '\n'
         << "max_forward_diff " << r.max_forward_diff << '\n'
         << "full_seconds " << r.full_seconds << '\n'
         << "extraction_seconds " << r.extraction_seconds << '\n'
         << "subgraph_gradient_seconds " << r.subgraph_gradient_seconds << '\n'
         << "full_evals_per_second " << r.full_rate() << '\n'
         << "subgraph_evals_per_second " << r.subgraph_rate() << '\n'
         << "speedup " << r.speedup() << '\n'
         << "speedup_gradient_only " << r.gradient_only_speedup() << '\n';
  std::cout << report.str();
  if (!o.out.empty()) write_text(o.out, report.str());
  return kExitOk;
}

int cmd_convert(const Options& o) {
  if (o.out.empty()) throw UsageError("convert needs --out");
  const auto ds = load_dataset_or_usage(o);
  describe(ds, o.quiet);
  tua::save_canonical(ds.graph, o.out, ds.edge_records);
  std::printf("wrote %s (%zu nodes, %zu edges)\n", o.out.c_str(), ds.graph.num_nodes(),
              ds.graph.num_edges());
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--dataset", o.dataset, "Dataset name, directory, <prefix> of .content/.cites, or canonical .json");
  cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint path");
  cmd->add_option("--seed", o.seed_flag, "Base seed");
  cmd->add_option("--out", o.out, "Output path");
  cmd->add_option("--target-class", o.target_class, "Target class c_A");
  cmd->add_option("--attack-nodes", o.attack_nodes, "Number of attack nodes");
  cmd->add_option("--fake-per-attack", o.fake_per_attack, "Fake nodes per attack node")->capture_default_str();
  cmd->add_option("--ancillary", o.ancillary, "Number of ancillary nodes");
  cmd->add_option("--iters", o.iters, "Maximum attack iterations")->capture_default_str();
  cmd->add_option("--budget", o.budget, "Perturbation budget (default: fake nodes + iterations)");
  cmd->add_flag("--full-grid", o.full_grid, "Full-scale repetitions (10) and all datasets");
  cmd->add_option("--reps", o.reps, "Repetitions per cell");
  cmd->add_option("--threads", o.threads, "Worker threads for sweeps")->capture_default_str();
  cmd->add_option("--summary-out", o.summary_out, "Per-cell mean/std CSV path");
  cmd->add_flag("--no-timing", o.no_timing, "Write 0 in the runtime_seconds column");
  cmd->add_flag("--quiet", o.quiet, "No progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted universal attack on two-layer GCNs"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train a GCN and write a checkpoint");
  add_common(train, o);
  train->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  train->add_option("--hidden", o.hidden, "Hidden units")->capture_default_str();
  auto* attack = app.add_subcommand("attack", "Run one attack and report its ASR");
  add_common(attack, o);
  auto* sweep_attack = app.add_subcommand("sweep-attack-nodes", "ASR for 1..4 attack nodes");
  add_common(sweep_attack, o);
  auto* sweep_anc = app.add_subcommand("sweep-ancillary", "ASR for 5/10/15/20 ancillary nodes");
  add_common(sweep_anc, o);
  auto* fluct = app.add_subcommand("fluctuation", "ASR spread over resampled ancillary sets");
  add_common(fluct, o);
  auto* bench = app.add_subcommand("bench-subgraph", "Time subgraph vs full-graph gradients");
  add_common(bench, o);
  bench->add_option("--rounds", o.rounds, "Timing rounds")->capture_default_str();
  auto* convert = app.add_subcommand("convert", "Citation text to canonical JSON");
  add_common(convert, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  o.seed = o.seed_flag.value_or(0);

  try {
    if (*train) return cmd_train(o);
    if (*attack) return cmd_attack(o);
    if (*sweep_attack) return run_sweep(o, true, false);
    if (*sweep_anc) return run_sweep(o, false, false);
    if (*fluct) return run_sweep(o, false, true);
    if (*bench) return cmd_bench(o);
    if (*convert) return cmd_convert(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const tua::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const tua::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
