#include "nback/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "nback/analysis.hpp"
#include "nback/attention_metrics.hpp"
#include "nback/errors.hpp"

namespace nback {
namespace fs = std::filesystem;

StatsTable accuracy_tests(const std::vector<RunRecord>& runs, const std::vector<int>& n_values, int layers, int heads) {
  std::vector<std::vector<double>> groups;
  StatsTable t;
  for (int n : n_values) {
    std::vector<double> g;
    for (const auto& r : analysis::select(runs, layers, heads, n)) g.push_back(r.final_accuracy());
    if (g.empty()) throw ValidationError(fmt::format("no successful L{} H{} runs for N={}", layers, heads, n));
    t.total_runs += g.size();
    groups.push_back(std::move(g));
  }
  t.kruskal = stats::kruskal_wallis(groups);
  for (std::size_t a = 0; a < groups.size(); ++a) {
    for (std::size_t b = a + 1; b < groups.size(); ++b) {
      t.pairs.push_back({n_values[a], n_values[b], stats::mann_whitney(groups[a], groups[b])});
    }
  }
  return t;
}

void write_table1(const StatsTable& t, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  out << "test,H,p,epsilon_squared\n";
  out << fmt::format("kruskal_wallis,{:.4f},{:.6g},{:.4f}\n", t.kruskal.h_statistic, t.kruskal.p_value,
                     t.kruskal.epsilon_squared);
  out << "comparison,U,p,r,p_normal,p_exact\n";
  for (const auto& p : t.pairs) {
    out << fmt::format("N{} vs N{},{:.4f},{:.6g},{:.4f},{:.6g},{}\n", p.n_a, p.n_b, p.result.u_statistic,
                       p.result.p_value, p.result.rank_biserial, p.result.p_normal,
                       p.result.p_exact ? fmt::format("{:.6g}", *p.result.p_exact) : std::string("NA"));
  }
}

std::string render_report(const std::vector<RunRecord>& runs) {
  std::string md = "# N-back attention report\n\n";
  const auto groups = analysis::accuracy_by_group(runs);
  md += fmt::format("Runs found: {}\n\n", runs.size());

  md += "## Test accuracy by architecture\n\n| L | H | N | mean acc | sem | runs | failed |\n|---|---|---|---|---|---|---|\n";
  for (const auto& [k, g] : groups) {
    md += fmt::format("| {} | {} | {} | {:.4f} | {:.4f} | {} | {} |\n", k.layers, k.heads, k.n_back, g.accuracy.mean,
                      g.accuracy.sem, g.accuracy.n, g.failures);
  }

  std::vector<int> ns;
  std::vector<double> xs, ys;
  for (const auto& [k, g] : groups) {
    if (k.layers == 1 && k.heads == 1 && g.accuracy.n > 0) {
      ns.push_back(k.n_back);
      xs.push_back(k.n_back);
      ys.push_back(g.accuracy.mean);
    }
  }
  if (ns.empty()) {
    md += "\nNo single-layer single-head runs; the remaining sections need them.\n";
    return md;
  }

  md += "\n## Logarithmic fit (L=1, H=1)\n\n";
  if (ns.size() >= 2) {
    const auto fit = analysis::log_fit(xs, ys);
    md += fmt::format("acc = {:.4f} + ({:.4f}) ln N, R^2 = {:.4f}; slope is {}.\n", fit.a, fit.b, fit.r_squared,
                      fit.b < 0 ? "negative" : "non-negative");
  } else {
    md += "Needs at least two N values.\n";
  }

  std::vector<int> test_ns;
  for (int n : ns) {
    if (n <= 3) test_ns.push_back(n);
  }
  if (test_ns.size() < 2) test_ns = ns;
  md += "\n## Rank tests on final accuracy (L=1, H=1)\n\n";
  if (test_ns.size() >= 2) {
    try {
      const auto t = accuracy_tests(runs, test_ns);
      md += fmt::format("Kruskal-Wallis over N in {{{}}}: H = {:.3f}, df = {}, p = {:.3g}, epsilon^2 = {:.3f}\n\n",
                        fmt::join(test_ns, ","), t.kruskal.h_statistic, t.kruskal.df, t.kruskal.p_value,
                        t.kruskal.epsilon_squared);
      md += "| N-back | U | p | r |\n|---|---|---|---|\n";
      for (const auto& p : t.pairs) {
        md += fmt::format("| {} vs {} | {:.1f} | {:.3g} | {:.4f} |\n", p.n_a, p.n_b, p.result.u_statistic,
                          p.result.p_value, p.result.rank_biserial);
      }
    } catch (const std::exception& e) {
      md += fmt::format("Not computable: {}\n", e.what());
    }
  }

  md += "\n## Attention diagnostics (L=1, H=1, final epoch)\n\n";
  md += "| N | mean H_N | sem | mean diagonal mass | runs with diagonal growth | Spearman(attn, acc) |\n|---|---|---|---|---|---|\n";
  const auto ent = analysis::entropy_summary(runs, 1, 1);
  for (const auto& s : ent) {
    const auto group = analysis::select(runs, 1, 1, s.n_back);
    std::size_t grew = 0;
    for (const auto& r : group) {
      const int last = static_cast<int>(r.metrics.size());
      if (diagonal_mass(r.attention(last), r.n_back) > diagonal_mass(r.attention(1), r.n_back)) ++grew;
    }
    const auto pairs = analysis::accuracy_attention_pairs(group);
    std::vector<double> att, acc;
    for (const auto& p : pairs) {
      att.push_back(p.attention);
      acc.push_back(p.accuracy);
    }
    md += fmt::format("| {} | {:.3f} | {:.3f} | {:.4f} | {}/{} | {:.3f} |\n", s.n_back, s.entropy.mean, s.entropy.sem,
                      analysis::mean_final_diagonal_mass(group), grew, group.size(),
                      att.size() >= 2 ? analysis::spearman(att, acc) : 0.0);
  }
  return md;
}

}  // namespace nback
