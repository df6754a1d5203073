#include "nback/grid.hpp"

#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <stdexcept>

#include <fmt/format.h>
#include <omp.h>

#include "nback/analysis.hpp"
#include "nback/dataset.hpp"
#include "nback/errors.hpp"
#include "nback/run_io.hpp"

namespace nback {
namespace fs = std::filesystem;

void GridConfig::validate() const {
  if (n_values.empty() || layer_values.empty() || head_values.empty()) {
    throw std::invalid_argument("grid: n_values, layer_values and head_values must be nonempty");
  }
  if (seeds_per_n < 1) throw std::invalid_argument("grid: seeds_per_n must be >= 1");
  for (int n : n_values) {
    if (n < 1 || n > kSequenceLength - kMatchesPerSequence) throw std::invalid_argument(fmt::format("grid: bad N {}", n));
  }
  for (int h : head_values) {
    ModelConfig m = model;
    m.n_heads = h;
    m.validate();
  }
  for (int l : layer_values) {
    if (l < 1) throw std::invalid_argument(fmt::format("grid: bad layer count {}", l));
  }
  train.validate();
  if (train_size < 1 || test_size < 1) throw std::invalid_argument("grid: split sizes must be positive");
}

void to_json(nlohmann::json& j, const GridConfig& c) {
  j = {{"n_values", c.n_values},     {"seeds_per_n", c.seeds_per_n}, {"layer_values", c.layer_values},
       {"head_values", c.head_values}, {"base_seed", c.base_seed},   {"model", c.model},
       {"train", c.train},           {"train_size", c.train_size},   {"test_size", c.test_size},
       {"workers", c.workers}};
}

void from_json(const nlohmann::json& j, GridConfig& c) {
  GridConfig d;
  c.n_values = j.value("n_values", d.n_values);
  c.seeds_per_n = j.value("seeds_per_n", d.seeds_per_n);
  c.layer_values = j.value("layer_values", d.layer_values);
  c.head_values = j.value("head_values", d.head_values);
  c.base_seed = j.value("base_seed", d.base_seed);
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
  c.train_size = j.value("train_size", d.train_size);
  c.test_size = j.value("test_size", d.test_size);
  c.workers = j.value("workers", d.workers);
}

GridConfig load_grid_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open grid config {}", path.string()));
  try {
    return nlohmann::json::parse(in).get<GridConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::uint64_t stable_hash(std::initializer_list<std::uint64_t> parts) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  std::uint64_t h = 0x6a09e667f3bcc909ull;
  for (auto p : parts) h = mix(h ^ mix(p));
  return h;
}

std::uint64_t run_seed(std::uint64_t base_seed, int layers, int heads, int n_back, int seed_index) {
  return base_seed ^ stable_hash({static_cast<std::uint64_t>(layers), static_cast<std::uint64_t>(heads),
                                  static_cast<std::uint64_t>(n_back), static_cast<std::uint64_t>(seed_index)});
}

std::uint64_t dataset_seed(std::uint64_t base_seed, int n_back) {
  return base_seed ^ stable_hash({0x64617461ull, static_cast<std::uint64_t>(n_back)});
}

std::vector<GridRun> plan_grid(const GridConfig& c, const fs::path& root) {
  std::vector<GridRun> plan;
  for (int l : c.layer_values)
    for (int h : c.head_values)
      for (int n : c.n_values)
        for (int k = 0; k < c.seeds_per_n; ++k) {
          plan.push_back({l, h, n, k, run_seed(c.base_seed, l, h, n, k),
                          root / fmt::format("L{}_H{}", l, h) / fmt::format("N{}", n) / fmt::format("seed{}", k)});
        }
  return plan;
}

int resolve_workers(int configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("NBACK_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  return omp_get_max_threads();
}

GridOutcome run_grid(const GridConfig& c, const fs::path& root, const std::function<void(const std::string&)>& log) {
  c.validate();
  fs::create_directories(root);
  {
    std::ofstream out(root / "grid_config.json");
    out << nlohmann::json(c).dump(2) << '\n';
  }

  std::map<int, Dataset> datasets;
  const auto data_dir = root / "data";
  for (int n : c.n_values) {
    if (fs::exists(train_file(data_dir, n)) && fs::exists(test_file(data_dir, n))) {
      datasets[n] = load_dataset(data_dir, n);
    } else {
      datasets[n] = generate_dataset(n, dataset_seed(c.base_seed, n), c.train_size, c.test_size);
      save_dataset(datasets[n], data_dir);
    }
  }

  const auto plan = plan_grid(c, root);
  GridOutcome outcome;
  std::vector<const GridRun*> pending;
  for (const auto& run : plan) {
    if (fs::exists(run.dir / "config.json")) {
      ++outcome.skipped;
      if (fs::exists(run.dir / "FAILED")) ++outcome.failed;
    } else {
      pending.push_back(&run);
    }
  }
  if (log) log(fmt::format("grid: {} runs planned, {} already complete", plan.size(), outcome.skipped));

  const int workers = resolve_workers(c.workers);
  const auto count = static_cast<long>(pending.size());
  std::vector<std::exception_ptr> errors(pending.size());
  std::size_t trained = 0;
  std::size_t failed = 0;
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers) reduction(+ : trained, failed)
  for (long i = 0; i < count; ++i) {
    const auto& run = *pending[static_cast<std::size_t>(i)];
    try {
      ModelConfig mc = c.model;
      mc.n_layers = run.layers;
      mc.n_heads = run.heads;
      TrainConfig tc = c.train;
      tc.seed = run.seed;
      const auto& ds = datasets.at(run.n_back);
      const auto art = train_model(ds, mc, tc);

      const auto tmp = run.dir.parent_path() / (".tmp_" + run.dir.filename().string());
      fs::remove_all(tmp);
      nlohmann::json extra = {{"layers", run.layers},
                              {"heads", run.heads},
                              {"seed_index", run.seed_index},
                              {"base_seed", c.base_seed},
                              {"dataset_seed", dataset_seed(c.base_seed, run.n_back)}};
      write_run(art, ds, tmp, extra);
      fs::remove_all(run.dir);
      fs::rename(tmp, run.dir);
      ++trained;
      if (art.failed) ++failed;
      if (log) {
#pragma omp critical(grid_log)
        log(fmt::format("L{} H{} N{} seed{}: {}", run.layers, run.heads, run.n_back, run.seed_index,
                        art.failed ? "FAILED " + art.failure
                                   : fmt::format("acc {:.4f}", art.epochs.back().test_accuracy)));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  outcome.trained = trained;
  outcome.failed += failed;
  write_grid_summary(root);
  return outcome;
}

void write_grid_summary(const fs::path& root) {
  std::vector<RunRecord> runs;
  for (const auto& r : load_runs(root)) runs.push_back(r);
  const auto groups = analysis::accuracy_by_group(runs);
  std::ofstream out(root / "grid_summary.csv", std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", (root / "grid_summary.csv").string()));
  out << "L,H,N,mean_acc,sem,runs,failures\n";
  for (const auto& [k, g] : groups) {
    out << fmt::format("{},{},{},{:.6f},{:.6f},{},{}\n", k.layers, k.heads, k.n_back, g.accuracy.mean, g.accuracy.sem,
                       g.accuracy.n, g.failures);
  }
}

}  // namespace nback
