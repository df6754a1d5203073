#include "nback/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace nback {

void ModelConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument(fmt::format("n_layers must be >= 1, got {}", n_layers));
  if (n_heads < 1) throw std::invalid_argument(fmt::format("n_heads must be >= 1, got {}", n_heads));
  if (d_model < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument(fmt::format("d_model {} must be a positive multiple of n_heads {}", d_model, n_heads));
  }
  if (seq_len < 1 || vocab < 1) throw std::invalid_argument("seq_len and vocab must be positive");
  if (!(init_std >= 0.0) || !std::isfinite(init_std)) throw std::invalid_argument("init_std must be finite and >= 0");
}

double ModelConfig::effective_init_std() const {
  return depth_scaled_init ? init_std / std::sqrt(static_cast<double>(n_layers)) : init_std;
}

template <class T>
ModelParams<T> zero_params(const ModelConfig& c) {
  c.validate();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto dh = static_cast<std::size_t>(c.d_head());
  ModelParams<T> p;
  p.token_embedding = Matrix<T>(static_cast<std::size_t>(c.vocab), d);
  p.position_embedding = Matrix<T>(static_cast<std::size_t>(c.seq_len), d);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& layer : p.layers) {
    for (int h = 0; h < c.n_heads; ++h) {
      layer.w_q.emplace_back(d, dh);
      layer.w_k.emplace_back(d, dh);
      layer.w_v.emplace_back(d, dh);
    }
    layer.w_o = Matrix<T>(d, d);
  }
  p.unembedding = Matrix<T>(d, 2);
  p.bias = Matrix<T>(1, 2);
  return p;
}

template <class T>
ModelParams<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = zero_params<T>(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = c.effective_init_std();
  p.visit([&](const std::string& name, Matrix<T>& m) {
    if (name == "unembedding_bias") return;
    for (auto& v : m.data()) v = static_cast<T>(sd * normal(rng));
  });
  return p;
}

template <class T>
std::size_t parameter_count(const ModelParams<T>& p) {
  std::size_t n = 0;
  p.visit([&](const std::string&, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <class T>
ParamSet<Var> bind_params(Tape<T>& tape, const ModelParams<T>& params) {
  ParamSet<Var> vars;
  vars.token_embedding = tape.leaf(params.token_embedding);
  vars.position_embedding = tape.leaf(params.position_embedding);
  vars.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& src = params.layers[l];
    auto& dst = vars.layers[l];
    for (std::size_t h = 0; h < src.w_q.size(); ++h) {
      dst.w_q.push_back(tape.leaf(src.w_q[h]));
      dst.w_k.push_back(tape.leaf(src.w_k[h]));
      dst.w_v.push_back(tape.leaf(src.w_v[h]));
    }
    dst.w_o = tape.leaf(src.w_o);
  }
  vars.unembedding = tape.leaf(params.unembedding);
  vars.bias = tape.leaf(params.bias);
  return vars;
}

template <class T>
ForwardVars forward(Tape<T>& tape, const ParamSet<Var>& p, const ModelConfig& c, std::span<const int> ids) {
  if (ids.size() != static_cast<std::size_t>(c.seq_len)) {
    throw ShapeError(fmt::format("forward: {} tokens, model expects {}", ids.size(), c.seq_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= c.vocab) throw std::out_of_range(fmt::format("forward: token id {} outside [0, {})", id, c.vocab));
  }

  ForwardVars out;
  const T inv_sqrt_dk = T{1} / std::sqrt(static_cast<T>(c.d_head()));
  Var x = tape.add(tape.gather_rows(p.token_embedding, ids), p.position_embedding);
  for (const auto& layer : p.layers) {
    std::vector<Var> heads;
    heads.reserve(layer.w_q.size());
    for (std::size_t h = 0; h < layer.w_q.size(); ++h) {
      Var q = tape.matmul(x, layer.w_q[h]);
      Var k = tape.matmul(x, layer.w_k[h]);
      Var v = tape.matmul(x, layer.w_v[h]);
      Var scores = tape.scale(tape.matmul_nt(q, k), inv_sqrt_dk);
      Var attn = tape.masked_softmax_rows(scores);
      out.attention.push_back(attn);
      heads.push_back(tape.matmul(attn, v));
    }
    Var merged = heads.size() == 1 ? heads.front() : tape.concat_cols(heads);
    Var attn_out = tape.matmul(merged, layer.w_o);
    x = c.use_residual ? tape.add(x, attn_out) : attn_out;
  }
  out.logits = tape.add_row(tape.matmul(x, p.unembedding), p.bias);
  return out;
}

template <class T>
Inference<T> run_forward(const ModelParams<T>& params, const ModelConfig& c, std::span<const int> ids) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params);
  const auto fv = forward(tape, vars, c, ids);
  Inference<T> inf;
  inf.logits = tape.value(fv.logits);
  for (std::size_t i = 0; i < fv.attention.size(); ++i) {
    const int layer = static_cast<int>(i) / c.n_heads;
    const int head = static_cast<int>(i) % c.n_heads;
    inf.attention.push_back({layer, head, tape.value(fv.attention[i]).template cast<float>()});
  }
  return inf;
}

template <class T>
std::vector<int> predict(const Matrix<T>& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

#define NBACK_INSTANTIATE(T)                                                                                       \
  template ModelParams<T> zero_params<T>(const ModelConfig&);                                                      \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                       \
  template std::size_t parameter_count<T>(const ModelParams<T>&);                                                  \
  template ParamSet<Var> bind_params<T>(Tape<T>&, const ModelParams<T>&);                                          \
  template ForwardVars forward<T>(Tape<T>&, const ParamSet<Var>&, const ModelConfig&, std::span<const int>);        \
  template Inference<T> run_forward<T>(const ModelParams<T>&, const ModelConfig&, std::span<const int>);           \
  template std::vector<int> predict<T>(const Matrix<T>&);

NBACK_INSTANTIATE(float)
NBACK_INSTANTIATE(double)

#undef NBACK_INSTANTIATE

}  // namespace nback
