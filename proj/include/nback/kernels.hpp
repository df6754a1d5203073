#pragma once

// Dense GEMM kernels. `serial` is the reference implementation; `omp`
// partitions output rows across OpenMP threads. Each output element is
// accumulated in the same k order in both, so results are bit-identical
// regardless of thread count.

#include <cstddef>

#include <fmt/format.h>

#include "nback/matrix.hpp"

namespace nback::kernels {

enum class Trans { No, Yes };

namespace detail {

template <class T>
struct GemmShape {
  std::size_t m, n, k;
};

template <class T>
GemmShape<T> check_gemm(const Matrix<T>& a, Trans ta, const Matrix<T>& b, Trans tb, const Matrix<T>& c) {
  const std::size_t m = ta == Trans::No ? a.rows() : a.cols();
  const std::size_t ka = ta == Trans::No ? a.cols() : a.rows();
  const std::size_t kb = tb == Trans::No ? b.rows() : b.cols();
  const std::size_t n = tb == Trans::No ? b.cols() : b.rows();
  if (ka != kb) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ ({}{} vs {}{})", a.shape_string(),
                                 ta == Trans::Yes ? "^T" : "", b.shape_string(), tb == Trans::Yes ? "^T" : ""));
  }
  if (c.rows() != m || c.cols() != n) {
    throw ShapeError(fmt::format("matmul: output is {}, expected {}x{}", c.shape_string(), m, n));
  }
  return {m, n, ka};
}

// Computes output row i of C (+)= op(A) op(B).
template <class T>
inline void gemm_row(const Matrix<T>& a, Trans ta, const Matrix<T>& b, Trans tb, Matrix<T>& c, std::size_t i,
                     std::size_t n, std::size_t k, bool accumulate) {
  T* out = c.data().data() + i * n;
  const T* bd = b.data().data();
  const T* ad = a.data().data();
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) out[j] = T{0};
  }
  if (tb == Trans::No) {
    // C[i,:] += A(i,p) * B[p,:], contiguous over j
    const std::size_t bcols = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ta == Trans::No ? ad[i * a.cols() + p] : ad[p * a.cols() + i];
      const T* brow = bd + p * bcols;
      for (std::size_t j = 0; j < n; ++j) out[j] += aip * brow[j];
    }
  } else {
    // C[i,j] += dot(A(i,:), B[j,:])
    const std::size_t bcols = b.cols();
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = bd + j * bcols;
      T acc{0};
      if (ta == Trans::No) {
        const T* arow = ad + i * a.cols();
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) acc += ad[p * a.cols() + i] * brow[p];
      }
      out[j] += acc;
    }
  }
}

}  // namespace detail

namespace serial {

template <class T>
void gemm(const Matrix<T>& a, Trans ta, const Matrix<T>& b, Trans tb, Matrix<T>& c, bool accumulate = false) {
  const auto s = detail::check_gemm(a, ta, b, tb, c);
  for (std::size_t i = 0; i < s.m; ++i) detail::gemm_row(a, ta, b, tb, c, i, s.n, s.k, accumulate);
}

}  // namespace serial

namespace omp {

template <class T>
void gemm(const Matrix<T>& a, Trans ta, const Matrix<T>& b, Trans tb, Matrix<T>& c, bool accumulate = false) {
  const auto s = detail::check_gemm(a, ta, b, tb, c);
  const auto rows = static_cast<long>(s.m);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    detail::gemm_row(a, ta, b, tb, c, static_cast<std::size_t>(i), s.n, s.k, accumulate);
  }
}

}  // namespace omp

// Below this many multiply-adds the thread fork costs more than it saves.
inline constexpr std::size_t kParallelGemmThreshold = 1u << 18;

template <class T>
void gemm(const Matrix<T>& a, Trans ta, const Matrix<T>& b, Trans tb, Matrix<T>& c, bool accumulate = false) {
  const std::size_t m = ta == Trans::No ? a.rows() : a.cols();
  const std::size_t n = tb == Trans::No ? b.cols() : b.rows();
  const std::size_t k = ta == Trans::No ? a.cols() : a.rows();
  if (m * n * k >= kParallelGemmThreshold) {
    omp::gemm(a, ta, b, tb, c, accumulate);
  } else {
    serial::gemm(a, ta, b, tb, c, accumulate);
  }
}

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), b.cols());
  gemm(a, Trans::No, b, Trans::No, c);
  return c;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace nback::kernels
