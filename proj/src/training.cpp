#include "nback/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "nback/attention_metrics.hpp"
#include "nback/errors.hpp"

namespace nback {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) throw std::invalid_argument(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
}

template <class T>
AdamState<T> make_adam_state(const ModelParams<T>& like) {
  AdamState<T> s{like, like};
  s.m.visit([](const std::string&, Matrix<T>& m) { m.fill(T{0}); });
  s.v.visit([](const std::string&, Matrix<T>& m) { m.fill(T{0}); });
  return s;
}

template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, long t,
                 const TrainConfig& c, const std::string& name) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw ShapeError(fmt::format("adam: size mismatch for {}", name));
  }
  if (t < 1) throw std::invalid_argument("adam: step index must be >= 1");
  const T b1 = static_cast<T>(c.adam_beta1);
  const T b2 = static_cast<T>(c.adam_beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(c.adam_beta1, static_cast<double>(t)));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.adam_beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(c.lr);
  const T eps = static_cast<T>(c.adam_eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * grad[i];
    v[i] = b2 * v[i] + (T{1} - b2) * grad[i] * grad[i];
    const T m_hat = m[i] / corr1;
    const T v_hat = v[i] / corr2;
    const T next = param[i] - lr * m_hat / (std::sqrt(v_hat) + eps);
    if (!std::isfinite(next)) throw NonFiniteError(fmt::format("adam: non-finite update of {}[{}]", name, i));
    param[i] = next;
  }
}

template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, long t, const TrainConfig& c) {
  std::vector<Matrix<T>*> p, m, v;
  std::vector<const Matrix<T>*> g;
  std::vector<std::string> names;
  params.visit([&](const std::string& n, Matrix<T>& x) {
    names.push_back(n);
    p.push_back(&x);
  });
  grads.visit([&](const std::string&, const Matrix<T>& x) { g.push_back(&x); });
  state.m.visit([&](const std::string&, Matrix<T>& x) { m.push_back(&x); });
  state.v.visit([&](const std::string&, Matrix<T>& x) { v.push_back(&x); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("adam: parameter, gradient and state layouts differ");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update<T>(p[i]->data(), g[i]->data(), m[i]->data(), v[i]->data(), t, c, names[i]);
  }
}

template <class T>
double batch_gradient(const ModelParams<T>& params, const ModelConfig& config,
                      std::span<const TaskInstance* const> batch, ModelParams<T>& grads, bool parallel) {
  const auto n = static_cast<long>(batch.size());
  if (n == 0) throw std::invalid_argument("batch_gradient: empty batch");
  std::vector<ModelParams<T>> slot(batch.size());
  std::vector<double> loss(batch.size(), 0.0);
  std::vector<std::exception_ptr> errors(batch.size());

#pragma omp parallel for schedule(static) if (parallel)
  for (long b = 0; b < n; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    try {
      Tape<T> tape;
      const auto vars = bind_params(tape, params);
      const auto ids = batch[ub]->token_ids();
      const auto targets = batch[ub]->targets();
      const auto fv = forward(tape, vars, config, ids);
      const Var l = tape.cross_entropy(fv.logits, targets);
      tape.backward(l);
      loss[ub] = tape.value(l)(0, 0);
      ParamSet<Var> v = vars;
      std::vector<Var> leaves;
      v.visit([&](const std::string&, Var& x) { leaves.push_back(x); });
      slot[ub] = zero_params<T>(config);
      std::size_t k = 0;
      slot[ub].visit([&](const std::string&, Matrix<T>& g) { g = tape.grad(leaves[k++]); });
    } catch (...) {
      errors[ub] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  grads = zero_params<T>(config);
  std::vector<Matrix<T>*> dst;
  grads.visit([&](const std::string&, Matrix<T>& g) { dst.push_back(&g); });
  const T inv_b = T{1} / static_cast<T>(n);
  double total = 0.0;
  for (std::size_t b = 0; b < slot.size(); ++b) {
    std::size_t k = 0;
    slot[b].visit([&](const std::string&, const Matrix<T>& g) {
      auto d = dst[k++]->data();
      auto s = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * inv_b;
    });
    total += loss[b];
  }
  return total / static_cast<double>(n);
}

EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& config,
                    const std::vector<TaskInstance>& instances) {
  if (instances.empty()) throw std::invalid_argument("evaluate: empty instance list");
  const int n_back = instances.front().n_back;
  for (const auto& inst : instances) {
    if (inst.n_back != n_back) throw ValidationError("evaluate: instances mix n_back values");
  }
  const auto count = static_cast<long>(instances.size());
  const auto seq = static_cast<std::size_t>(config.seq_len);
  const auto records = static_cast<std::size_t>(config.n_layers * config.n_heads);

  std::vector<Inference<float>> inf(instances.size());
  std::vector<std::exception_ptr> errors(instances.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    try {
      inf[ui] = run_forward(params, config, instances[ui].token_ids());
    } catch (...) {
      errors[ui] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalResult r;
  r.per_position_accuracy.assign(seq, 0.0);
  std::vector<Matrix<double>> attn_sum(records, Matrix<double>(seq, seq));
  r.mean_entropy.assign(records, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto pred = predict(inf[i].logits);
    const auto tgt = instances[i].targets();
    for (std::size_t p = 0; p < seq; ++p) {
      if (pred[p] == tgt[p]) {
        r.per_position_accuracy[p] += 1.0;
        ++correct;
      }
    }
    for (std::size_t k = 0; k < records; ++k) {
      const auto& a = inf[i].attention[k].matrix;
      auto dst = attn_sum[k].data();
      auto src = a.data();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      r.mean_entropy[k] += total_entropy(a);
    }
    r.predictions.push_back(pred);
  }
  const double n = static_cast<double>(instances.size());
  for (auto& v : r.per_position_accuracy) v /= n;
  r.accuracy = static_cast<double>(correct) / (n * static_cast<double>(seq));
  for (std::size_t k = 0; k < records; ++k) {
    r.mean_entropy[k] /= n;
    Matrix<float> mean(seq, seq);
    auto src = attn_sum[k].data();
    auto dst = mean.data();
    for (std::size_t e = 0; e < dst.size(); ++e) dst[e] = static_cast<float>(src[e] / n);
    r.mean_attention.push_back({static_cast<int>(k) / config.n_heads, static_cast<int>(k) % config.n_heads, std::move(mean)});
  }
  return r;
}

RunArtifact train_model(const Dataset& dataset, const ModelConfig& mc, const TrainConfig& tc) {
  mc.validate();
  tc.validate();
  if (dataset.train.empty() || dataset.test.empty()) throw std::invalid_argument("train_model: empty split");
  for (const auto* split : {&dataset.train, &dataset.test}) {
    for (const auto& inst : *split) {
      if (inst.n_back != dataset.n_back) throw ValidationError("train_model: instance n_back differs from dataset");
    }
  }

  RunArtifact art;
  art.n_back = dataset.n_back;
  art.model_config = mc;
  art.train_config = tc;
  art.final_params = init_params<float>(mc, tc.seed);
  auto& params = art.final_params;
  auto state = make_adam_state(params);

  std::seed_seq shuffle_seq{static_cast<std::uint32_t>(tc.seed), static_cast<std::uint32_t>(tc.seed >> 32), 0x5eedu};
  std::mt19937_64 shuffle_rng(shuffle_seq);
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  long step = 0;
  ModelParams<float> grads;
  try {
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double loss_sum = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
        std::vector<const TaskInstance*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset.train[order[i]]);
        loss_sum += batch_gradient<float>(params, mc, batch, grads, tc.parallel_batch);
        adam_step(params, grads, state, ++step, tc);
        ++batches;
      }
      const double train_loss = loss_sum / batches;
      if (!std::isfinite(train_loss)) throw NonFiniteError(fmt::format("epoch {}: non-finite training loss", epoch));

      auto eval = evaluate(params, mc, dataset.test);
      EpochMetrics em;
      em.epoch = epoch;
      em.train_loss = train_loss;
      em.test_accuracy = eval.accuracy;
      em.per_position_accuracy = std::move(eval.per_position_accuracy);
      em.mean_attention = std::move(eval.mean_attention);
      em.mean_entropy = std::move(eval.mean_entropy);
      art.epochs.push_back(std::move(em));
      if (epoch == tc.epochs) art.predictions = std::move(eval.predictions);
    }
  } catch (const NonFiniteError& e) {
    art.failed = true;
    art.failure = e.what();
  }
  return art;
}

template AdamState<float> make_adam_state<float>(const ModelParams<float>&);
template AdamState<double> make_adam_state<double>(const ModelParams<double>&);
template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>, long,
                                 const TrainConfig&, const std::string&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  long, const TrainConfig&, const std::string&);
template void adam_step<float>(ModelParams<float>&, const ModelParams<float>&, AdamState<float>&, long,
                               const TrainConfig&);
template void adam_step<double>(ModelParams<double>&, const ModelParams<double>&, AdamState<double>&, long,
                                const TrainConfig&);
template double batch_gradient<float>(const ModelParams<float>&, const ModelConfig&,
                                      std::span<const TaskInstance* const>, ModelParams<float>&, bool);
template double batch_gradient<double>(const ModelParams<double>&, const ModelConfig&,
                                       std::span<const TaskInstance* const>, ModelParams<double>&, bool);

}  // namespace nback
