#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every op in execution order, so node ids are already a
// topological order and backward() is a single reverse sweep. One Tape per
// thread; distinct tapes share nothing.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "nback/kernels.hpp"
#include "nback/matrix.hpp"

namespace nback {

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input (a parameter or anything whose gradient is wanted).
  Var leaf(Matrix<T> value) { return push(std::move(value), true, {}); }
  // Non-differentiable input.
  Var constant(Matrix<T> value) { return push(std::move(value), false, {}); }

  const Matrix<T>& value(Var v) const { return node(v).value; }

  // Gradient of the loss passed to backward(). Zero for nodes the loss does
  // not depend on.
  const Matrix<T>& grad(Var v) const {
    if (!backward_done_) throw std::logic_error("Tape::grad called before backward");
    return node(v).grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  // ---- ops ----

  Var matmul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    Matrix<T> out(av.rows(), bv.cols());
    kernels::gemm(av, kernels::Trans::No, bv, kernels::Trans::No, out);
    return record(std::move(out), {a, b}, "matmul", [a, b](Tape& t, const Matrix<T>& g) {
      using kernels::Trans;
      if (t.wants(a)) kernels::gemm(g, Trans::No, t.value(b), Trans::Yes, t.grad_mut(a), true);
      if (t.wants(b)) kernels::gemm(t.value(a), Trans::Yes, g, Trans::No, t.grad_mut(b), true);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    Matrix<T> out(av.rows(), bv.rows());
    kernels::gemm(av, kernels::Trans::No, bv, kernels::Trans::Yes, out);
    return record(std::move(out), {a, b}, "matmul_nt", [a, b](Tape& t, const Matrix<T>& g) {
      using kernels::Trans;
      if (t.wants(a)) kernels::gemm(g, Trans::No, t.value(b), Trans::No, t.grad_mut(a), true);
      if (t.wants(b)) kernels::gemm(g, Trans::Yes, t.value(a), Trans::No, t.grad_mut(b), true);
    });
  }

  Var add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    require_same_shape(av, bv, "add");
    Matrix<T> out = av;
    auto o = out.data();
    auto bd = bv.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
    return record(std::move(out), {a, b}, "add", [a, b](Tape& t, const Matrix<T>& g) {
      if (t.wants(a)) accumulate(t.grad_mut(a), g);
      if (t.wants(b)) accumulate(t.grad_mut(b), g);
    });
  }

  // Adds a 1 x cols row vector to every row of a.
  Var add_row(Var a, Var row) {
    const auto& av = value(a);
    const auto& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
      throw ShapeError(fmt::format("add_row: {} cannot broadcast over {}", rv.shape_string(), av.shape_string()));
    }
    Matrix<T> out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
    return record(std::move(out), {a, row}, "add_row", [a, row](Tape& t, const Matrix<T>& g) {
      if (t.wants(a)) accumulate(t.grad_mut(a), g);
      if (t.wants(row)) {
        auto& gr = t.grad_mut(row);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      }
    });
  }

  Var scale(Var a, T c) {
    Matrix<T> out = value(a);
    for (auto& v : out.data()) v *= c;
    return record(std::move(out), {a}, "scale", [a, c](Tape& t, const Matrix<T>& g) {
      if (!t.wants(a)) return;
      auto ga = t.grad_mut(a).data();
      auto gd = g.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * gd[i];
    });
  }

  Var transpose(Var a) {
    return record(kernels::transpose(value(a)), {a}, "transpose", [a](Tape& t, const Matrix<T>& g) {
      if (!t.wants(a)) return;
      auto& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
    });
  }

  // Row i is a softmax over columns 0..i; entries above the diagonal are 0.
  Var masked_softmax_rows(Var logits) {
    const auto& x = value(logits);
    if (x.rows() != x.cols()) {
      throw ShapeError(fmt::format("masked_softmax_rows: expected square matrix, got {}", x.shape_string()));
    }
    require_finite(x, "masked_softmax_rows input");
    Matrix<T> y = causal_softmax(x);
    return record(std::move(y), {logits}, "masked_softmax_rows", [logits, self = next_id()](Tape& t, const Matrix<T>& g) {
      if (!t.wants(logits)) return;
      const auto& y = t.nodes_[self].value;
      auto& gx = t.grad_mut(logits);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        T dot{0};
        for (std::size_t j = 0; j <= i; ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j <= i; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  }

  // Mean over rows of -log softmax(logits[i])[targets[i]]. Returns 1x1.
  Var cross_entropy(Var logits, std::span<const int> targets) {
    const auto& x = value(logits);
    if (targets.size() != x.rows()) {
      throw ShapeError(fmt::format("cross_entropy: {} targets for {} logits", targets.size(), x.shape_string()));
    }
    Matrix<T> probs(x.rows(), x.cols());
    std::vector<int> tgt(targets.begin(), targets.end());
    T loss{0};
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= x.cols()) {
        throw std::out_of_range(fmt::format("cross_entropy: target {} outside [0, {})", tgt[i], x.cols()));
      }
      T mx = x(i, 0);
      for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
      T z{0};
      for (std::size_t j = 0; j < x.cols(); ++j) {
        probs(i, j) = std::exp(x(i, j) - mx);
        z += probs(i, j);
      }
      for (std::size_t j = 0; j < x.cols(); ++j) probs(i, j) /= z;
      loss += -(x(i, static_cast<std::size_t>(tgt[i])) - mx - std::log(z));
    }
    const T inv_n = T{1} / static_cast<T>(x.rows());
    Matrix<T> out(1, 1, loss * inv_n);
    if (!std::isfinite(out(0, 0))) throw NonFiniteError("cross_entropy: non-finite loss");
    return record(std::move(out), {logits}, "cross_entropy",
                  [logits, probs = std::move(probs), tgt = std::move(tgt), inv_n](Tape& t, const Matrix<T>& g) {
                    if (!t.wants(logits)) return;
                    auto& gx = t.grad_mut(logits);
                    const T s = g(0, 0) * inv_n;
                    for (std::size_t i = 0; i < probs.rows(); ++i)
                      for (std::size_t j = 0; j < probs.cols(); ++j) {
                        const T onehot = static_cast<std::size_t>(tgt[i]) == j ? T{1} : T{0};
                        gx(i, j) += s * (probs(i, j) - onehot);
                      }
                  });
  }

  // Row lookup: out[r] = table[ids[r]].
  Var gather_rows(Var table, std::span<const int> ids) {
    const auto& tv = value(table);
    Matrix<T> out(ids.size(), tv.cols());
    std::vector<int> idx(ids.begin(), ids.end());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= tv.rows()) {
        throw std::out_of_range(fmt::format("gather_rows: id {} outside [0, {})", idx[r], tv.rows()));
      }
      auto src = tv.row(static_cast<std::size_t>(idx[r]));
      std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return record(std::move(out), {table}, "gather_rows", [table, idx = std::move(idx)](Tape& t, const Matrix<T>& g) {
      if (!t.wants(table)) return;
      auto& gt = t.grad_mut(table);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        auto dst = gt.row(static_cast<std::size_t>(idx[r]));
        auto src = g.row(r);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) {
        throw ShapeError(fmt::format("concat_cols: {} vs {}", value(parts[0]).shape_string(), value(p).shape_string()));
      }
      cols += value(p).cols();
    }
    Matrix<T> out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& pv = value(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
      off += pv.cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return record(std::move(out), ins, "concat_cols", [ins](Tape& t, const Matrix<T>& g) {
      std::size_t off = 0;
      for (Var p : ins) {
        const std::size_t pc = t.value(p).cols();
        if (t.wants(p)) {
          auto& gp = t.grad_mut(p);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(i, off + j);
        }
        off += pc;
      }
    });
  }

  // Sum of all entries, 1x1.
  Var sum(Var a) {
    T s{0};
    for (T v : value(a).data()) s += v;
    return record(Matrix<T>(1, 1, s), {a}, "sum", [a](Tape& t, const Matrix<T>& g) {
      if (!t.wants(a)) return;
      for (auto& v : t.grad_mut(a).data()) v += g(0, 0);
    });
  }

  // Reverse sweep from a 1x1 node. Allowed once per recording.
  void backward(Var loss) {
    if (backward_done_) throw std::logic_error("Tape::backward called twice without reset");
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ShapeError(fmt::format("backward: loss must be 1x1, got {}", lv.shape_string()));
    }
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
    }
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad(0, 0) = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.back) n.back(*this, n.grad);
    }
  }

  // Reference row-wise causal softmax, shared with inference code.
  static Matrix<T> causal_softmax(const Matrix<T>& x) {
    Matrix<T> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      T mx = x(i, 0);
      for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, x(i, j));
      T z{0};
      for (std::size_t j = 0; j <= i; ++j) {
        y(i, j) = std::exp(x(i, j) - mx);
        z += y(i, j);
      }
      for (std::size_t j = 0; j <= i; ++j) y(i, j) /= z;
    }
    return y;
  }

 private:
  using Backward = std::function<void(Tape&, const Matrix<T>&)>;

  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward back;
    bool requires_grad = false;
  };

  static void accumulate(Matrix<T>& dst, const Matrix<T>& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: unknown variable");
    return nodes_[v.id];
  }

  bool wants(Var v) const { return nodes_[v.id].requires_grad; }
  Matrix<T>& grad_mut(Var v) { return nodes_[v.id].grad; }
  std::uint32_t next_id() const { return static_cast<std::uint32_t>(nodes_.size()); }

  Var push(Matrix<T> value, bool requires_grad, Backward back) {
    if (backward_done_) throw std::logic_error("Tape: recording after backward requires reset");
    nodes_.push_back(Node{std::move(value), {}, std::move(back), requires_grad});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var record(Matrix<T> out, std::initializer_list<Var> inputs, const char* op, Backward back) {
    return record(std::move(out), std::vector<Var>(inputs), op, std::move(back));
  }

  Var record(Matrix<T> out, const std::vector<Var>& inputs, const char* op, Backward back) {
    require_finite(out, op);
    bool rg = false;
    for (Var in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(out), rg, rg ? std::move(back) : Backward{});
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace nback
