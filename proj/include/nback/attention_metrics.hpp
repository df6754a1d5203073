#pragma once

#include <vector>

#include "nback/matrix.hpp"

namespace nback {

// Throws ValidationError unless `a` is square, non-negative, zero above the
// diagonal and each row sums to 1 within `tol`.
void check_attention(const Matrix<float>& a, double tol = 1e-4);

// Sum over rows of the Shannon entropy of each row, in nats, with
// 0 log 0 = 0. Bounded by ln(T!) for a T x T causal matrix.
double total_entropy(const Matrix<float>& a, double tol = 1e-4);
double total_entropy(const Matrix<double>& a, double tol = 1e-4);

// A[i][i-N] for i = N..T-1.
std::vector<double> nback_diagonal(const Matrix<float>& a, int n_back);

// Mean of nback_diagonal(a, n_back).
double diagonal_mass(const Matrix<float>& a, int n_back);

}  // namespace nback
