#pragma once

// On-disk layout of one training run:
//
//   config.json       model/train config, n_back, status
//   metrics.csv       epoch,train_loss,test_accuracy,pos_00..pos_23
//   entropy.csv       epoch,layer,head,mean_entropy
//   attention/epoch_{e}_L{l}H{h}.f32   test-mean attention, row-major LE float32
//   predictions.csv   index,sequence,labels,predicted
//   params.bin        checkpoint (see save_params)
//   FAILED            present only when training diverged

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nback/dataset.hpp"
#include "nback/model.hpp"
#include "nback/training.hpp"

namespace nback {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Checkpoint: 8-byte magic "NBACKPRM", uint64 LE header length, a JSON
// header {"model_config", "tensors": [{name, rows, cols, offset, bytes}]},
// then the raw little-endian float32 buffers. Offsets are relative to the
// first byte after the header.
void save_params(const ModelParams<float>& params, const ModelConfig& config, const std::filesystem::path& path);
std::pair<ModelConfig, ModelParams<float>> load_params(const std::filesystem::path& path);

void write_f32_matrix(const Matrix<float>& m, const std::filesystem::path& path);
Matrix<float> read_f32_matrix(const std::filesystem::path& path, std::size_t rows, std::size_t cols);

std::filesystem::path attention_file(const std::filesystem::path& run_dir, int epoch, int layer, int head);

// Writes every file of the layout above into `dir` (created if needed).
// `extra` is merged into config.json (grid coordinates, dataset info).
void write_run(const RunArtifact& artifact, const Dataset& dataset, const std::filesystem::path& dir,
               const nlohmann::json& extra = nlohmann::json::object());

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> per_position;
};

// The parts of a run directory the analysis needs, without attention maps.
struct RunRecord {
  std::filesystem::path dir;
  int n_back = 0;
  int layers = 0;
  int heads = 0;
  int seed_index = 0;
  bool failed = false;
  std::vector<MetricsRow> metrics;
  // entropy[epoch-1][layer*heads + head]
  std::vector<std::vector<double>> entropy;

  double final_accuracy() const { return metrics.back().test_accuracy; }
  Matrix<float> attention(int epoch, int layer = 0, int head = 0) const;
};

RunRecord load_run(const std::filesystem::path& dir);

// All run directories (those holding config.json) under root, sorted by path.
std::vector<RunRecord> load_runs(const std::filesystem::path& root);

}  // namespace nback
