#pragma once

// Rank-based tests: Kruskal-Wallis with epsilon-squared, Mann-Whitney U with
// rank-biserial r.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace nback::stats {

struct Ranks {
  std::vector<double> ranks;            // 1-based midranks, input order
  std::vector<std::size_t> tie_groups;  // sizes of groups with >= 2 equal values
};

Ranks ranks_with_ties(std::span<const double> values);

// Upper tail of chi-square with df degrees of freedom.
double chi_square_sf(double x, int df);
// Upper tail of the standard normal.
double normal_sf(double z);

struct KruskalResult {
  double h_statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  double epsilon_squared = 0.0;
};

// Tie-corrected H referred to chi-square(k - 1);
// epsilon^2 = (H - k + 1) / (n - k).
KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

double epsilon_squared(double h, std::size_t k, std::size_t n);

struct MannWhitneyResult {
  double u_statistic = 0.0;  // group-1 wins, ties count 1/2
  double p_value = 1.0;      // exact when available, else normal
  double p_normal = 1.0;     // tie-corrected, continuity-corrected, two-sided
  std::optional<double> p_exact;
  double rank_biserial = 0.0;  // 1 - 2U / (n1 n2)
};

// Exact p is computed when n1 * n2 <= kExactLimit and there are no ties.
inline constexpr std::size_t kExactLimit = 400;

MannWhitneyResult mann_whitney(std::span<const double> g1, std::span<const double> g2);

double rank_biserial(double u, std::size_t n1, std::size_t n2);

// Two-sided exact p for U under H0 (no ties), from the full null
// distribution of U.
double mann_whitney_exact_p(double u, std::size_t n1, std::size_t n2);

}  // namespace nback::stats
