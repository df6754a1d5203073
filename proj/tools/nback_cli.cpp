// nback: command-line front end for dataset generation, training, the
// experiment grid and the analysis outputs.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 one or more runs failed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <omp.h>

#include "nback/analysis.hpp"
#include "nback/dataset.hpp"
#include "nback/errors.hpp"
#include "nback/grid.hpp"
#include "nback/report.hpp"
#include "nback/run_io.hpp"
#include "nback/training.hpp"

namespace fs = std::filesystem;
using namespace nback;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRunFailed = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_model_flags(CLI::App* cmd, ModelConfig& m) {
  cmd->add_option("--layers", m.n_layers, "Decoder layers")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--heads", m.n_heads, "Attention heads per layer")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--d-model", m.d_model, "Model width")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--init-std", m.init_std, "Weight init standard deviation")->capture_default_str();
  cmd->add_flag("!--no-depth-scaled-init", m.depth_scaled_init, "Use init_std as is for every depth");
}

void add_train_flags(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size, "Sequences per batch")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--seed", t.seed, "Run seed (init and shuffling)")->capture_default_str();
}

int cmd_gen(int n, std::uint64_t seed, int train_n, int test_n, const fs::path& out) {
  const auto ds = generate_dataset(n, seed, train_n, test_n);
  save_dataset(ds, out);
  std::cout << fmt::format("wrote {} and {}\n", train_file(out, n).string(), test_file(out, n).string());
  return 0;
}

int cmd_train(const fs::path& data, int n, ModelConfig mc, TrainConfig tc, bool no_residual, const fs::path& out) {
  mc.use_residual = !no_residual;
  try {
    mc.validate();
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto ds = load_dataset(data, n);
  const auto art = train_model(ds, mc, tc);
  write_run(art, ds, out, {{"layers", mc.n_layers}, {"heads", mc.n_heads}, {"seed_index", 0}});
  if (art.failed) {
    std::cerr << "training diverged: " << art.failure << '\n';
    return kExitRunFailed;
  }
  for (const auto& e : art.epochs) {
    std::cout << fmt::format("epoch {:2d}  loss {:.4f}  test acc {:.4f}\n", e.epoch, e.train_loss, e.test_accuracy);
  }
  std::cout << "run written to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-only transformers on N-back tasks"};
  app.require_subcommand(1);

  // gen
  int gen_n = 1;
  std::uint64_t gen_seed = 0;
  int gen_train = 800, gen_test = 200;
  fs::path gen_out = "data";
  auto* gen = app.add_subcommand("gen", "Generate an N-back dataset (train and test JSONL)");
  gen->add_option("--n", gen_n, "N of the N-back task")->required()->check(CLI::Range(1, kSequenceLength - kMatchesPerSequence));
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--train-size", gen_train)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--test-size", gen_test)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

  // train
  fs::path train_data = "data";
  int train_n = 1;
  ModelConfig train_model_cfg;
  TrainConfig train_cfg;
  bool no_residual = false;
  fs::path train_out = "runs/N1/seed0";
  int threads = 0;
  auto* train = app.add_subcommand("train", "Train one model and write a run directory");
  train->add_option("--data", train_data, "Directory with nback{N}_train/test.jsonl")->capture_default_str();
  train->add_option("--n", train_n, "N of the dataset to load")->required()->check(CLI::Range(1, kSequenceLength - kMatchesPerSequence));
  add_model_flags(train, train_model_cfg);
  add_train_flags(train, train_cfg);
  train->add_flag("--no-residual", no_residual, "Drop the residual path around attention");
  train->add_option("--threads", threads, "OpenMP threads for batch parallelism (default: NBACK_WORKERS or all)");
  train->add_option("--out", train_out, "Run directory")->capture_default_str();

  // grid
  fs::path grid_config_path;
  fs::path grid_out = "runs";
  std::vector<int> grid_ns, grid_layers, grid_heads;
  int grid_seeds = 0, grid_workers = 0;
  std::uint64_t grid_base_seed = 0;
  auto* grid = app.add_subcommand("grid", "Train the (L, H, N, seed) grid with a worker pool; resumable");
  grid->add_option("--config", grid_config_path, "Grid config JSON");
  grid->add_option("--out", grid_out, "Runs root")->capture_default_str();
  grid->add_option("--n-values", grid_ns, "Override N values")->delimiter(',');
  grid->add_option("--layer-values", grid_layers, "Override layer counts")->delimiter(',');
  grid->add_option("--head-values", grid_heads, "Override head counts")->delimiter(',');
  auto* seeds_opt = grid->add_option("--seeds", grid_seeds, "Override seeds per N")->check(CLI::PositiveNumber);
  auto* base_seed_opt = grid->add_option("--base-seed", grid_base_seed, "Override base seed");
  grid->add_option("--workers", grid_workers, "Worker threads (default: NBACK_WORKERS or all cores)");

  // analyze / stats / report
  fs::path runs_dir = "runs";
  fs::path analyze_out;
  auto* analyze = app.add_subcommand("analyze", "Write figure CSVs and attention heatmaps");
  analyze->add_option("--runs", runs_dir, "Runs root")->capture_default_str();
  analyze->add_option("--out", analyze_out, "Output directory (default: <runs>/analysis)");

  fs::path stats_out;
  std::vector<int> stats_ns = {1, 2, 3};
  int stats_layers = 1, stats_heads = 1;
  auto* stats_cmd = app.add_subcommand("stats", "Kruskal-Wallis and pairwise Mann-Whitney on final accuracy");
  stats_cmd->add_option("--runs", runs_dir, "Runs root")->capture_default_str();
  stats_cmd->add_option("--out", stats_out, "Output CSV (default: <runs>/analysis/table1.csv)");
  stats_cmd->add_option("--n-values", stats_ns, "N groups to compare")->delimiter(',')->capture_default_str();
  stats_cmd->add_option("--layers", stats_layers)->capture_default_str();
  stats_cmd->add_option("--heads", stats_heads)->capture_default_str();

  fs::path report_out;
  auto* report = app.add_subcommand("report", "Write a markdown summary of every diagnostic");
  report->add_option("--runs", runs_dir, "Runs root")->capture_default_str();
  report->add_option("--out", report_out, "Output file (default: <runs>/report.md)");

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

  try {
    if (*gen) return cmd_gen(gen_n, gen_seed, gen_train, gen_test, gen_out);

    if (*train) {
      if (threads > 0) omp_set_num_threads(threads);
      else omp_set_num_threads(resolve_workers(0));
      return cmd_train(train_data, train_n, train_model_cfg, train_cfg, no_residual, train_out);
    }

    if (*grid) {
      GridConfig gc;
      if (!grid_config_path.empty()) gc = load_grid_config(grid_config_path);
      if (!grid_ns.empty()) gc.n_values = grid_ns;
      if (!grid_layers.empty()) gc.layer_values = grid_layers;
      if (!grid_heads.empty()) gc.head_values = grid_heads;
      if (seeds_opt->count()) gc.seeds_per_n = grid_seeds;
      if (base_seed_opt->count()) gc.base_seed = grid_base_seed;
      if (grid_workers > 0) gc.workers = grid_workers;
      try {
        gc.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto outcome = run_grid(gc, grid_out, [](const std::string& msg) { std::cerr << msg << '\n'; });
      std::cout << fmt::format("trained {}, skipped {}, failed {}; summary in {}\n", outcome.trained, outcome.skipped,
                               outcome.failed, (grid_out / "grid_summary.csv").string());
      return outcome.failed > 0 ? kExitRunFailed : 0;
    }

    if (*analyze) {
      const auto out = analyze_out.empty() ? runs_dir / "analysis" : analyze_out;
      analysis::write_analysis(load_runs(runs_dir), out);
      std::cout << "analysis written to " << out.string() << '\n';
      return 0;
    }

    if (*stats_cmd) {
      const auto out = stats_out.empty() ? runs_dir / "analysis" / "table1.csv" : stats_out;
      const auto table = accuracy_tests(load_runs(runs_dir), stats_ns, stats_layers, stats_heads);
      write_table1(table, out);
      std::cout << fmt::format("H = {:.3f}, p = {:.3g}, epsilon^2 = {:.3f}; table in {}\n", table.kruskal.h_statistic,
                               table.kruskal.p_value, table.kruskal.epsilon_squared, out.string());
      return 0;
    }

    if (*report) {
      const auto out = report_out.empty() ? runs_dir / "report.md" : report_out;
      const auto text = render_report(load_runs(runs_dir));
      std::ofstream f(out, std::ios::binary);
      if (!f) throw std::runtime_error(fmt::format("cannot write {}", out.string()));
      f << text;
      std::cout << "report written to " << out.string() << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
