#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nback/dataset.hpp"
#include "nback/model.hpp"

namespace nback {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Split each batch across OpenMP threads. Results do not depend on the
  // thread count.
  bool parallel_batch = true;

  void validate() const;  // throws std::invalid_argument

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// First and second moments, shaped like the parameters.
template <class T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
};

template <class T>
AdamState<T> make_adam_state(const ModelParams<T>& like);

// Bias-corrected Adam on one tensor; `t` is the 1-based step index.
// Throws NonFiniteError naming `name` if an updated value is not finite.
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, long t,
                 const TrainConfig& config, const std::string& name);

template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, long t,
               const TrainConfig& config);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_position_accuracy;
  // Test-set mean attention, layer-major (layer * n_heads + head).
  std::vector<AttentionRecord> mean_attention;
  // Mean over instances of total_entropy, same ordering as mean_attention.
  std::vector<double> mean_entropy;
  std::vector<std::vector<int>> predictions;
};

EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& config,
                    const std::vector<TaskInstance>& instances);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> per_position_accuracy;
  std::vector<AttentionRecord> mean_attention;
  std::vector<double> mean_entropy;
};

struct RunArtifact {
  int n_back = 0;
  ModelConfig model_config;
  TrainConfig train_config;
  std::vector<EpochMetrics> epochs;
  ModelParams<float> final_params;
  std::vector<std::vector<int>> predictions;  // test set, final epoch
  bool failed = false;
  std::string failure;
};

// Trains one model on dataset.train, evaluating on dataset.test after every
// epoch. A non-finite loss or update ends the run with failed = true.
RunArtifact train_model(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& train_config);

// Mean cross-entropy and its gradient over a batch; per-sequence gradients
// are reduced in index order.
template <class T>
double batch_gradient(const ModelParams<T>& params, const ModelConfig& config,
                      std::span<const TaskInstance* const> batch, ModelParams<T>& grads, bool parallel);

}  // namespace nback
