#include "nback/attention_metrics.hpp"

#include <cmath>

#include <fmt/format.h>

#include "nback/errors.hpp"

namespace nback {
namespace {

template <class T>
void check_impl(const Matrix<T>& a, double tol) {
  if (a.rows() != a.cols()) throw ValidationError(fmt::format("attention matrix must be square, got {}", a.shape_string()));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = a(i, j);
      if (!std::isfinite(v) || v < 0.0) throw ValidationError(fmt::format("attention[{}][{}] = {} is not a probability", i, j, v));
      if (j > i && v != 0.0) throw ValidationError(fmt::format("attention[{}][{}] = {} above the causal diagonal", i, j, v));
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw ValidationError(fmt::format("attention row {} sums to {}", i, s));
  }
}

template <class T>
double entropy_impl(const Matrix<T>& a, double tol) {
  check_impl(a, tol);
  double h = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double p = a(i, j);
      if (p > 0.0) h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace

void check_attention(const Matrix<float>& a, double tol) { check_impl(a, tol); }

double total_entropy(const Matrix<float>& a, double tol) { return entropy_impl(a, tol); }
double total_entropy(const Matrix<double>& a, double tol) { return entropy_impl(a, tol); }

std::vector<double> nback_diagonal(const Matrix<float>& a, int n_back) {
  if (a.rows() != a.cols()) throw ValidationError(fmt::format("attention matrix must be square, got {}", a.shape_string()));
  if (n_back < 1 || static_cast<std::size_t>(n_back) >= a.rows()) {
    throw std::out_of_range(fmt::format("n_back {} outside [1, {})", n_back, a.rows()));
  }
  const auto n = static_cast<std::size_t>(n_back);
  std::vector<double> out;
  out.reserve(a.rows() - n);
  for (std::size_t i = n; i < a.rows(); ++i) out.push_back(a(i, i - n));
  return out;
}

double diagonal_mass(const Matrix<float>& a, int n_back) {
  const auto d = nback_diagonal(a, n_back);
  double s = 0.0;
  for (double v : d) s += v;
  return s / static_cast<double>(d.size());
}

}  // namespace nback
