#pragma once

// Attention-only causal Transformer: token + learned position embeddings,
// L layers of masked multi-head self-attention (no FFN, no layer norm),
// and a two-logit unembedding per position.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nback/matrix.hpp"
#include "nback/tape.hpp"

namespace nback {

struct ModelConfig {
  int n_layers = 1;
  int n_heads = 1;
  int d_model = 64;
  int seq_len = 24;
  int vocab = 20;
  bool use_residual = true;
  double init_std = 0.25;
  // Divide init_std by sqrt(n_layers).
  bool depth_scaled_init = true;

  int d_head() const { return d_model / n_heads; }
  double effective_init_std() const;
  void validate() const;  // throws std::invalid_argument

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One parameter container shape, instantiated with Matrix<T> for values and
// gradients and with Var for tape bindings.
template <class Leaf>
struct LayerSet {
  std::vector<Leaf> w_q, w_k, w_v;  // one per head, d_model x d_head
  Leaf w_o;                         // d_model x d_model
};

template <class Leaf>
struct ParamSet {
  Leaf token_embedding;     // vocab x d_model
  Leaf position_embedding;  // seq_len x d_model
  std::vector<LayerSet<Leaf>> layers;
  Leaf unembedding;  // d_model x 2
  Leaf bias;         // 1 x 2

  // Visits every leaf in a fixed order with a stable name.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    f(std::string("token_embedding"), s.token_embedding);
    f(std::string("position_embedding"), s.position_embedding);
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      auto& layer = s.layers[l];
      for (std::size_t h = 0; h < layer.w_q.size(); ++h) {
        const std::string p = "layer" + std::to_string(l) + ".head" + std::to_string(h);
        f(p + ".w_q", layer.w_q[h]);
        f(p + ".w_k", layer.w_k[h]);
        f(p + ".w_v", layer.w_v[h]);
      }
      f("layer" + std::to_string(l) + ".w_o", layer.w_o);
    }
    f(std::string("unembedding"), s.unembedding);
    f(std::string("unembedding_bias"), s.bias);
  }
};

template <class T>
using ModelParams = ParamSet<Matrix<T>>;

// Zero-valued container with the shapes of `config`.
template <class T>
ModelParams<T> zero_params(const ModelConfig& config);

// Gaussian(0, effective_init_std()^2) weights, zero bias; deterministic in seed.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

template <class T>
std::size_t parameter_count(const ModelParams<T>& params);

struct ForwardVars {
  Var logits;                  // seq_len x 2
  std::vector<Var> attention;  // layer-major, n_layers * n_heads
};

template <class T>
ParamSet<Var> bind_params(Tape<T>& tape, const ModelParams<T>& params);

// Records the forward pass on `tape`. token_ids must lie in [0, vocab).
template <class T>
ForwardVars forward(Tape<T>& tape, const ParamSet<Var>& params, const ModelConfig& config,
                    std::span<const int> token_ids);

struct AttentionRecord {
  int layer = 0;
  int head = 0;
  Matrix<float> matrix;  // seq_len x seq_len, row-stochastic, zero above diagonal
};

template <class T>
struct Inference {
  Matrix<T> logits;
  std::vector<AttentionRecord> attention;
};

// Forward pass without retaining a graph for training.
template <class T>
Inference<T> run_forward(const ModelParams<T>& params, const ModelConfig& config, std::span<const int> token_ids);

// Argmax per row; an exact tie resolves to class 0 (nonmatch).
template <class T>
std::vector<int> predict(const Matrix<T>& logits);

}  // namespace nback
