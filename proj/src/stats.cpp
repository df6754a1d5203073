#include "nback/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>
#include <fmt/format.h>

#include "nback/errors.hpp"

namespace nback::stats {

Ranks ranks_with_ties(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("ranks_with_ties: empty input");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Ranks r;
  r.ranks.assign(values.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) r.ranks[order[k]] = mid;
    if (j - i > 1) r.tie_groups.push_back(j - i);
    i = j;
  }
  return r;
}

double chi_square_sf(double x, int df) {
  if (df < 1) throw std::invalid_argument("chi_square_sf: df must be >= 1");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(static_cast<double>(df) / 2.0, x / 2.0);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

double epsilon_squared(double h, std::size_t k, std::size_t n) {
  if (n <= k) throw std::invalid_argument("epsilon_squared: needs more observations than groups");
  return (h - static_cast<double>(k) + 1.0) / static_cast<double>(n - k);
}

KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw std::invalid_argument("kruskal_wallis: needs at least two groups");
  std::vector<double> all;
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("kruskal_wallis: empty group");
    all.insert(all.end(), g.begin(), g.end());
  }
  const std::size_t n = all.size();
  if (n < 3) throw std::invalid_argument("kruskal_wallis: needs at least 3 observations");
  const auto r = ranks_with_ties(all);

  const double nd = static_cast<double>(n);
  double tie_sum = 0.0;
  for (std::size_t t : r.tie_groups) {
    const double td = static_cast<double>(t);
    tie_sum += td * td * td - td;
  }
  const double correction = 1.0 - tie_sum / (nd * nd * nd - nd);
  if (correction <= 0.0) throw ValidationError("kruskal_wallis: all values identical, H is undefined");

  double s = 0.0;
  std::size_t off = 0;
  for (const auto& g : groups) {
    double rs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rs += r.ranks[off + i];
    s += rs * rs / static_cast<double>(g.size());
    off += g.size();
  }
  KruskalResult res;
  res.h_statistic = (12.0 / (nd * (nd + 1.0)) * s - 3.0 * (nd + 1.0)) / correction;
  res.h_statistic = std::max(res.h_statistic, 0.0);
  res.df = static_cast<int>(groups.size()) - 1;
  res.p_value = chi_square_sf(res.h_statistic, res.df);
  res.epsilon_squared = epsilon_squared(res.h_statistic, groups.size(), n);
  return res;
}

double rank_biserial(double u, std::size_t n1, std::size_t n2) {
  return 1.0 - 2.0 * u / (static_cast<double>(n1) * static_cast<double>(n2));
}

double mann_whitney_exact_p(double u, std::size_t n1, std::size_t n2) {
  // count[a][b][k]: arrangements of a group-1 and b group-2 values with U = k,
  // built one sample at a time. Rolled over a to keep memory at O(n2 * U).
  const std::size_t umax = n1 * n2;
  std::vector<std::vector<double>> prev(n2 + 1, std::vector<double>(umax + 1, 0.0));
  for (std::size_t b = 0; b <= n2; ++b) prev[b][0] = 1.0;  // a = 0
  for (std::size_t a = 1; a <= n1; ++a) {
    std::vector<std::vector<double>> cur(n2 + 1, std::vector<double>(umax + 1, 0.0));
    cur[0][0] = 1.0;
    for (std::size_t b = 1; b <= n2; ++b) {
      for (std::size_t k = 0; k <= a * b; ++k) {
        // Largest value is from group 1: it beats all b group-2 values.
        const double from_g1 = k >= b ? prev[b][k - b] : 0.0;
        const double from_g2 = cur[b - 1][k];
        cur[b][k] = from_g1 + from_g2;
      }
    }
    prev = std::move(cur);
  }
  const auto& dist = prev[n2];
  const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
  double lower = 0.0;
  double upper = 0.0;
  for (std::size_t k = 0; k <= umax; ++k) {
    const double kd = static_cast<double>(k);
    if (kd <= u + 1e-9) lower += dist[k];
    if (kd >= u - 1e-9) upper += dist[k];
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

MannWhitneyResult mann_whitney(std::span<const double> g1, std::span<const double> g2) {
  if (g1.empty() || g2.empty()) throw std::invalid_argument("mann_whitney: empty group");
  const std::size_t n1 = g1.size();
  const std::size_t n2 = g2.size();

  std::vector<double> all(g1.begin(), g1.end());
  all.insert(all.end(), g2.begin(), g2.end());
  const auto r = ranks_with_ties(all);
  double r1 = 0.0;
  for (std::size_t i = 0; i < n1; ++i) r1 += r.ranks[i];
  const double n1d = static_cast<double>(n1);
  const double n2d = static_cast<double>(n2);

  MannWhitneyResult res;
  res.u_statistic = r1 - n1d * (n1d + 1.0) / 2.0;
  res.rank_biserial = rank_biserial(res.u_statistic, n1, n2);

  const double n = n1d + n2d;
  double tie_sum = 0.0;
  for (std::size_t t : r.tie_groups) {
    const double td = static_cast<double>(t);
    tie_sum += td * td * td - td;
  }
  const double mu = n1d * n2d / 2.0;
  const double var = n1d * n2d / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
  if (var <= 0.0) {
    res.p_normal = 1.0;
  } else {
    const double z = std::max(0.0, std::abs(res.u_statistic - mu) - 0.5) / std::sqrt(var);
    res.p_normal = std::min(1.0, 2.0 * normal_sf(z));
  }
  res.p_value = res.p_normal;
  if (r.tie_groups.empty() && n1 * n2 <= kExactLimit) {
    res.p_exact = mann_whitney_exact_p(res.u_statistic, n1, n2);
    res.p_value = *res.p_exact;
  }
  return res;
}

}  // namespace nback::stats
