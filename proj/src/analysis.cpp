#include "nback/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "nback/attention_metrics.hpp"
#include "nback/errors.hpp"
#include "nback/heatmap.hpp"
#include "nback/stats.hpp"

namespace nback::analysis {
namespace fs = std::filesystem;

MeanSem mean_sem(std::span<const double> v) {
  MeanSem r;
  r.n = v.size();
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.sem = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples of size >= 2");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = stats::ranks_with_ties(x).ranks;
  const auto ry = stats::ranks_with_ties(y).ranks;
  return pearson(rx, ry);
}

LogFit log_fit(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("log_fit: xs and ys differ in length");
  std::set<double> distinct;
  for (double x : xs) {
    if (!(x > 0.0)) throw std::invalid_argument("log_fit: x values must be positive");
    distinct.insert(x);
  }
  if (distinct.size() < 2) throw std::invalid_argument("log_fit: needs at least two distinct x values");
  const double n = static_cast<double>(xs.size());
  std::vector<double> lx(xs.size());
  std::transform(xs.begin(), xs.end(), lx.begin(), [](double x) { return std::log(x); });
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ys[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  LogFit f;
  f.b = sxy / sxx;
  f.a = my - f.b * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ys[i] - (f.a + f.b * lx[i]);
    ss_res += e * e;
  }
  f.r_squared = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

std::map<ArchKey, AccuracyGroup> accuracy_by_group(const std::vector<RunRecord>& runs) {
  std::map<ArchKey, AccuracyGroup> groups;
  for (const auto& r : runs) {
    auto& g = groups[ArchKey{r.layers, r.heads, r.n_back}];
    if (r.failed || r.metrics.empty()) {
      ++g.failures;
    } else {
      g.per_run.push_back(r.final_accuracy());
    }
  }
  for (auto& [key, g] : groups) g.accuracy = mean_sem(g.per_run);
  return groups;
}

DiagonalProfile diagonal_profile(const Matrix<float>& attention, int n_back, int epoch) {
  return DiagonalProfile{n_back, epoch, nback_diagonal(attention, n_back)};
}

std::vector<AccuracyAttentionPair> accuracy_attention_pairs(const std::vector<RunRecord>& runs) {
  std::vector<AccuracyAttentionPair> out;
  if (runs.empty()) return out;
  const int n = runs.front().n_back;
  for (const auto& r : runs) {
    if (r.n_back != n) throw ValidationError("accuracy_attention_pairs: runs mix n_back values");
    if (r.metrics.empty()) throw ParseError(fmt::format("{}: run has no epochs", r.dir.string()));
    for (const auto& m : r.metrics) {
      const auto profile = diagonal_profile(r.attention(m.epoch), n, m.epoch);
      for (std::size_t k = 0; k < profile.values.size(); ++k) {
        const std::size_t i = k + static_cast<std::size_t>(n);
        if (i >= m.per_position.size()) throw ParseError(fmt::format("{}: per-position accuracy too short", r.dir.string()));
        out.push_back({r.seed_index, m.epoch, static_cast<int>(i), profile.values[k], m.per_position[i]});
      }
    }
  }
  return out;
}

std::vector<RunRecord> select(const std::vector<RunRecord>& runs, int layers, int heads, int n_back) {
  std::vector<RunRecord> out;
  for (const auto& r : runs) {
    if (!r.failed && !r.metrics.empty() && r.layers == layers && r.heads == heads && r.n_back == n_back) out.push_back(r);
  }
  return out;
}

std::vector<EntropySummary> entropy_summary(const std::vector<RunRecord>& runs, int layers, int heads, int layer,
                                            int head) {
  std::set<int> ns;
  for (const auto& r : runs) {
    if (r.layers == layers && r.heads == heads) ns.insert(r.n_back);
  }
  std::vector<EntropySummary> out;
  const auto slot = static_cast<std::size_t>(layer * heads + head);
  for (int n : ns) {
    const auto group = select(runs, layers, heads, n);
    if (group.empty()) throw ValidationError(fmt::format("entropy_summary: no successful runs for N={}", n));
    EntropySummary s;
    s.n_back = n;
    std::vector<double> acc;
    for (const auto& r : group) {
      s.per_run.push_back(r.entropy.back().at(slot));
      acc.push_back(r.final_accuracy());
    }
    s.entropy = mean_sem(s.per_run);
    s.accuracy = mean_sem(acc);
    out.push_back(std::move(s));
  }
  return out;
}

double mean_final_diagonal_mass(const std::vector<RunRecord>& runs) {
  if (runs.empty()) throw std::invalid_argument("mean_final_diagonal_mass: no runs");
  double s = 0.0;
  for (const auto& r : runs) s += diagonal_mass(r.attention(static_cast<int>(r.metrics.size())), r.n_back);
  return s / static_cast<double>(runs.size());
}

namespace {

std::ofstream open_csv(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", p.string()));
  return out;
}

}  // namespace

void write_analysis(const std::vector<RunRecord>& runs, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto groups = accuracy_by_group(runs);

  {
    auto out = open_csv(out_dir / "fig2a.csv");
    out << "L,H,N,mean_acc,sem,runs,failures\n";
    for (const auto& [k, g] : groups) {
      out << fmt::format("{},{},{},{:.6f},{:.6f},{},{}\n", k.layers, k.heads, k.n_back, g.accuracy.mean, g.accuracy.sem,
                         g.accuracy.n, g.failures);
    }
  }

  // Headline figures use the single-layer single-head model.
  std::vector<double> xs, ys;
  std::vector<std::pair<int, MeanSem>> base;
  for (const auto& [k, g] : groups) {
    if (k.layers == 1 && k.heads == 1 && g.accuracy.n > 0) {
      xs.push_back(k.n_back);
      ys.push_back(g.accuracy.mean);
      base.emplace_back(k.n_back, g.accuracy);
    }
  }
  {
    auto out = open_csv(out_dir / "fig2b.csv");
    out << "N,mean_acc,sem,fit_a,fit_b,fit_r2\n";
    LogFit fit{NAN, NAN, NAN};
    if (std::set<double>(xs.begin(), xs.end()).size() >= 2) fit = log_fit(xs, ys);
    for (const auto& [n, ms] : base) {
      out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", n, ms.mean, ms.sem, fit.a, fit.b, fit.r_squared);
    }
  }

  if (!base.empty()) {
    // Mean attention across seeds for the 3-back model, or the largest N
    // below it when 3-back is absent.
    int fig3_n = base.front().first;
    for (const auto& [n, ms] : base) {
      if (n <= 3) fig3_n = n;
    }
    const auto group = select(runs, 1, 1, fig3_n);
    const int epochs = static_cast<int>(group.front().metrics.size());
    for (int e = 1; e <= epochs; ++e) {
      Matrix<double> sum(kSequenceLength, kSequenceLength);
      for (const auto& r : group) {
        const auto a = r.attention(e);
        for (std::size_t i = 0; i < a.size(); ++i) sum.data()[i] += a.data()[i];
      }
      Matrix<float> mean(kSequenceLength, kSequenceLength);
      for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] = static_cast<float>(sum.data()[i] / group.size());
      render_heatmap(mean, out_dir / fmt::format("fig3_epoch{}.svg", e), fmt::format("{}-back, epoch {}", fig3_n, e));
    }
  }

  for (const auto& [n, ms] : base) {
    const auto pairs = accuracy_attention_pairs(select(runs, 1, 1, n));
    auto out = open_csv(out_dir / fmt::format("fig4_N{}.csv", n));
    out << "seed,epoch,position,attention,accuracy\n";
    for (const auto& p : pairs) {
      out << fmt::format("{},{},{},{:.6f},{:.6f}\n", p.seed, p.epoch, p.position, p.attention, p.accuracy);
    }
  }

  {
    auto out = open_csv(out_dir / "fig5.csv");
    out << "N,mean_H,sem,mean_acc\n";
    if (!base.empty()) {
      for (const auto& s : entropy_summary(runs, 1, 1)) {
        out << fmt::format("{},{:.6f},{:.6f},{:.6f}\n", s.n_back, s.entropy.mean, s.entropy.sem, s.accuracy.mean);
      }
    }
  }
}

}  // namespace nback::analysis
