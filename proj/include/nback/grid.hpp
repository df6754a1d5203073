#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nback/model.hpp"
#include "nback/training.hpp"

namespace nback {

struct GridConfig {
  std::vector<int> n_values = {1, 2, 3, 4, 5, 6};
  int seeds_per_n = 50;
  std::vector<int> layer_values = {1, 2};
  std::vector<int> head_values = {1, 2, 4};
  std::uint64_t base_seed = 0;
  ModelConfig model;  // n_layers / n_heads are overridden per grid cell
  TrainConfig train;  // seed is overridden per run
  int train_size = 800;
  int test_size = 200;
  int workers = 0;  // 0: NBACK_WORKERS, else the OpenMP default

  void validate() const;  // throws std::invalid_argument
};

void to_json(nlohmann::json& j, const GridConfig& c);
void from_json(const nlohmann::json& j, GridConfig& c);
GridConfig load_grid_config(const std::filesystem::path& path);

// splitmix64 finaliser chain over the coordinates; stable across builds.
std::uint64_t stable_hash(std::initializer_list<std::uint64_t> parts);

// base_seed xor hash(L, H, N, index): adding grid axes never moves a run.
std::uint64_t run_seed(std::uint64_t base_seed, int layers, int heads, int n_back, int seed_index);
std::uint64_t dataset_seed(std::uint64_t base_seed, int n_back);

struct GridRun {
  int layers = 1;
  int heads = 1;
  int n_back = 1;
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;  // root/L{l}_H{h}/N{n}/seed{k}
};

std::vector<GridRun> plan_grid(const GridConfig& config, const std::filesystem::path& root);

struct GridOutcome {
  std::size_t trained = 0;
  std::size_t skipped = 0;  // already complete on disk
  std::size_t failed = 0;   // diverged, among trained and skipped
};

// Effective worker count: config.workers, else $NBACK_WORKERS, else OpenMP's.
int resolve_workers(int configured);

// Generates (or reloads) one dataset per N under root/data, trains every
// missing run, then writes root/grid_summary.csv. Each run is written to a
// temporary sibling and renamed into place once complete.
GridOutcome run_grid(const GridConfig& config, const std::filesystem::path& root,
                     const std::function<void(const std::string&)>& log = {});

void write_grid_summary(const std::filesystem::path& root);

}  // namespace nback
