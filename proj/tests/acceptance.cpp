// Acceptance run: one PASS/FAIL line per criterion. Trains the 1L1H grid
// (N = 1..6, 50 seeds) and the 2L4H grid (N = 1..3, 10 seeds) under --work;
// finished runs are reused on a second invocation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "nback/analysis.hpp"
#include "nback/attention_metrics.hpp"
#include "nback/dataset.hpp"
#include "nback/grid.hpp"
#include "nback/model.hpp"
#include "nback/report.hpp"
#include "nback/run_io.hpp"
#include "nback/stats.hpp"

using namespace nback;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << fmt::format("[{}] {:>2} {}: {}", pass ? "PASS" : "FAIL", id, what, detail) << std::endl;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dataset_validity() {
  const auto t0 = Clock::now();
  std::size_t violations = 0;
  for (int n = 1; n <= 6; ++n) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(1000 + n));
    for (int i = 0; i < 10000; ++i) {
      const auto inst = generate_instance(n, rng);
      try {
        validate(inst);
        if (inst.labels != labels_from_sequence(inst.sequence, n)) ++violations;
      } catch (const std::exception&) {
        ++violations;
      }
    }
  }
  const double secs = seconds_since(t0);
  verdict(1, violations == 0 && secs < 10.0, "dataset validity",
          fmt::format("{} violations in 60000 instances, {:.2f}s", violations, secs));
}

double model_loss(const ModelParams<double>& p, const ModelConfig& c, const std::vector<int>& ids,
                  const std::vector<int>& targets) {
  Tape<double> tape;
  const auto out = forward(tape, bind_params(tape, p), c, ids);
  return tape.value(tape.cross_entropy(out.logits, targets))(0, 0);
}

void gradient_correctness() {
  ModelConfig c;
  c.d_model = 8;
  c.seq_len = 6;
  c.init_std = 0.5;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto params = init_params<double>(c, seed);
    std::mt19937_64 rng(seed + 100);
    std::vector<int> ids(6), targets(6);
    for (auto& v : ids) v = static_cast<int>(rng() % 20);
    for (auto& v : targets) v = static_cast<int>(rng() % 2);

    Tape<double> tape;
    const auto vars = bind_params(tape, params);
    tape.backward(tape.cross_entropy(forward(tape, vars, c, ids).logits, targets));
    std::vector<Matrix<double>> analytic;
    vars.visit([&](const std::string&, const Var& v) { analytic.push_back(tape.grad(v)); });

    std::size_t k = 0;
    auto work = params;
    std::vector<Matrix<double>*> leaves;
    work.visit([&](const std::string&, Matrix<double>& m) { leaves.push_back(&m); });
    for (auto* m : leaves) {
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < m->size(); ++i) {
        double& x = m->data()[i];
        const double keep = x;
        x = keep + 1e-4;
        const double up = model_loss(work, c, ids, targets);
        x = keep - 1e-4;
        const double down = model_loss(work, c, ids, targets);
        x = keep;
        const double num = (up - down) / 2e-4;
        const double ana = analytic[k].data()[i];
        diff += (num - ana) * (num - ana);
        na += ana * ana;
        nn += num * num;
      }
      const double scale = std::sqrt(std::max(na, nn));
      worst = std::max(worst, scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale);
      ++k;
    }
  }
  verdict(2, worst < 1e-6, "gradient correctness", fmt::format("worst relative error {:.3e} over 5 seeds", worst));
}

void entropy_oracle() {
  Matrix<double> one_hot(24, 24), uniform(24, 24);
  double log_factorial = 0.0;
  for (std::size_t i = 0; i < 24; ++i) {
    one_hot(i, i / 2) = 1.0;
    for (std::size_t j = 0; j <= i; ++j) uniform(i, j) = 1.0 / static_cast<double>(i + 1);
    log_factorial += std::log(static_cast<double>(i + 1));
  }
  const double h0 = total_entropy(one_hot);
  const double hu = total_entropy(uniform);
  verdict(3, h0 == 0.0 && std::abs(hu - log_factorial) < 1e-9, "entropy oracle",
          fmt::format("one-hot {}, causal-uniform {:.12f} vs ln(24!) {:.12f}", h0, hu, log_factorial));
}

struct GridData {
  std::vector<RunRecord> runs;
  double seconds = 0.0;
};

GridData train_grid(const fs::path& root, std::vector<int> ns, int seeds, int layers, int heads) {
  GridConfig g;
  g.n_values = std::move(ns);
  g.seeds_per_n = seeds;
  g.layer_values = {layers};
  g.head_values = {heads};
  const auto t0 = Clock::now();
  const auto outcome = run_grid(g, root, [](const std::string& m) { std::cerr << m << '\n'; });
  GridData d;
  d.seconds = seconds_since(t0);
  d.runs = load_runs(root);
  std::cout << fmt::format("grid {}: trained {}, reused {}, failed {}, {:.0f}s with {} workers", root.string(),
                           outcome.trained, outcome.skipped, outcome.failed, d.seconds, resolve_workers(g.workers))
            << std::endl;
  return d;
}

void capacity_limit(const GridData& grid) {
  const auto table = accuracy_tests(grid.runs, {1, 2, 3});
  const auto groups = analysis::accuracy_by_group(grid.runs);
  const double a1 = groups.at({1, 1, 1}).accuracy.mean;
  const double a2 = groups.at({1, 1, 2}).accuracy.mean;
  const double a3 = groups.at({1, 1, 3}).accuracy.mean;
  std::size_t n = 0;
  for (int k = 1; k <= 3; ++k) n += groups.at({1, 1, k}).per_run.size();
  verdict(4, a1 > a2 && a2 > a3 && table.kruskal.p_value < 0.05, "capacity limit",
          fmt::format("acc {:.4f} > {:.4f} > {:.4f}; H = {:.3f}, p = {:.3g}, eps^2 = {:.3f}, n = {}", a1, a2, a3,
                      table.kruskal.h_statistic, table.kruskal.p_value, table.kruskal.epsilon_squared, n));
  for (const auto& p : table.pairs) {
    std::cout << fmt::format("      N{} vs N{}: U = {:.1f}, p = {:.3g}, r = {:.4f}", p.n_a, p.n_b,
                             p.result.u_statistic, p.result.p_value, p.result.rank_biserial)
              << std::endl;
  }
}

void logarithmic_decline(const GridData& grid) {
  const auto groups = analysis::accuracy_by_group(grid.runs);
  std::vector<double> xs, ys;
  std::string means;
  for (int n = 1; n <= 6; ++n) {
    xs.push_back(n);
    ys.push_back(groups.at({1, 1, n}).accuracy.mean);
    means += fmt::format(" {:.4f}", ys.back());
  }
  const auto fit = analysis::log_fit(xs, ys);
  verdict(5, fit.b < 0.0 && fit.r_squared > 0.6, "logarithmic decline",
          fmt::format("means{}; slope {:.4f}, R^2 {:.3f}", means, fit.b, fit.r_squared));
}

void attention_aggregation(const GridData& grid) {
  bool pass = true;
  std::string detail;
  for (int n = 1; n <= 3; ++n) {
    const auto runs = analysis::select(grid.runs, 1, 1, n);
    std::size_t grew = 0;
    for (const auto& r : runs) {
      const int last = static_cast<int>(r.metrics.size());
      if (diagonal_mass(r.attention(last), n) > diagonal_mass(r.attention(1), n)) ++grew;
    }
    const double frac = runs.empty() ? 0.0 : static_cast<double>(grew) / static_cast<double>(runs.size());
    pass = pass && frac >= 0.8;
    detail += fmt::format("N={}: {}/{} ({:.0f}%) ", n, grew, runs.size(), 100 * frac);
  }
  verdict(6, pass, "attention aggregation", detail);
}

void accuracy_attention_coupling(const GridData& grid) {
  bool pass = true;
  std::string detail;
  for (int n = 2; n <= 3; ++n) {
    const auto pairs = analysis::accuracy_attention_pairs(analysis::select(grid.runs, 1, 1, n));
    std::vector<double> att, acc;
    for (const auto& p : pairs) {
      att.push_back(p.attention);
      acc.push_back(p.accuracy);
    }
    const double rho = analysis::spearman(att, acc);
    pass = pass && rho > 0.0;
    detail += fmt::format("N={}: rho = {:.4f} over {} tuples  ", n, rho, pairs.size());
  }
  verdict(7, pass, "accuracy-attention coupling", detail);
}

void entropy_ordering(const GridData& grid) {
  std::vector<RunRecord> subset;
  for (const auto& r : grid.runs) {
    if (r.n_back <= 3) subset.push_back(r);
  }
  const auto es = analysis::entropy_summary(subset);
  bool pass = es.size() == 3;
  std::string detail;
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (i > 0) pass = pass && es[i].entropy.mean > es[i - 1].entropy.mean;
    detail += fmt::format("N={}: H = {:.3f} (acc {:.4f})  ", es[i].n_back, es[i].entropy.mean, es[i].accuracy.mean);
  }
  verdict(8, pass, "entropy ordering", detail);
}

double enumerate_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size();
  auto u_of = [&](const std::vector<bool>& first) {
    double u = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (first[i] && !first[j] && pooled[i] > pooled[j]) u += 1;
    return u;
  };
  std::vector<bool> obs(n, false);
  std::fill(obs.begin(), obs.begin() + static_cast<long>(a.size()), true);
  const double u_obs = u_of(obs);
  std::vector<bool> mask(n, false);
  std::fill(mask.end() - static_cast<long>(a.size()), mask.end(), true);
  double total = 0, le = 0, ge = 0;
  do {
    const double u = u_of(mask);
    ++total;
    le += u <= u_obs;
    ge += u >= u_obs;
  } while (std::next_permutation(mask.begin(), mask.end()));
  return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

void statistics_oracle() {
  const double eps2 = stats::epsilon_squared(38.517, 3, 150);
  const double r1 = stats::rank_biserial(1825, 50, 50);
  const double r2 = stats::rank_biserial(2096, 50, 50);
  const double r3 = stats::rank_biserial(1665, 50, 50);
  const double h = stats::kruskal_wallis({{1, 2}, {3, 4}}).h_statistic;
  bool exact_ok = true;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(0.0, 1.0);
  for (std::size_t n = 1; n <= 8; ++n) {
    for (int rep = 0; rep < 4; ++rep) {
      std::vector<double> a(n), b(n);
      for (auto& x : a) x = d(rng) + 0.5 * rep;
      for (auto& x : b) x = d(rng);
      const auto r = stats::mann_whitney(a, b);
      exact_ok = exact_ok && r.p_exact && std::abs(*r.p_exact - enumerate_p(a, b)) < 1e-12;
    }
  }
  const bool pass = std::abs(eps2 - 0.2484) <= 0.0005 && std::abs(r1 + 0.46) < 1e-12 && std::abs(r2 + 0.6768) < 1e-12 &&
                    std::abs(r3 + 0.332) < 1e-12 && std::abs(h - 2.4) < 1e-12 && exact_ok;
  verdict(9, pass, "statistics oracle",
          fmt::format("eps^2 {:.4f}; r {:.4f} {:.4f} {:.4f}; H {:.12f}; exact p {}", eps2, r1, r2, r3, h,
                      exact_ok ? "matches enumeration" : "MISMATCH"));
}

void architecture_sanity(const GridData& grid) {
  const auto groups = analysis::accuracy_by_group(grid.runs);
  bool pass = true;
  std::string detail;
  for (int n = 1; n <= 3; ++n) {
    const auto& g = groups.at({2, 4, n});
    pass = pass && g.accuracy.mean >= 0.95 && g.accuracy.n == 10;
    detail += fmt::format("N={}: {:.4f} ({} runs)  ", n, g.accuracy.mean, g.accuracy.n);
  }
  verdict(10, pass, "architecture grid sanity (L=2, H=4)", detail);
}

void determinism(const fs::path& grid_root, const fs::path& work) {
  const auto run_dir = grid_root / "L1_H1" / "N2" / "seed0";
  const auto cfg = nlohmann::json::parse(slurp(run_dir / "config.json"));
  const auto ds = load_dataset(grid_root / "data", 2);
  const auto art = train_model(ds, cfg.at("model_config").get<ModelConfig>(), cfg.at("train_config").get<TrainConfig>());
  const auto rerun = work / "rerun";
  fs::remove_all(rerun);
  write_run(art, ds, rerun);
  bool same = slurp(run_dir / "metrics.csv") == slurp(rerun / "metrics.csv");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(run_dir / "attention")) {
    same = same && slurp(e.path()) == slurp(rerun / "attention" / e.path().filename());
    ++files;
  }
  verdict(11, same && files == 10, "determinism",
          fmt::format("metrics.csv and {} attention maps {}", files, same ? "byte-identical" : "DIFFER"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work = "acceptance_runs";
  app.add_option("--work", work, "Directory for grid runs (reused when present)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  try {
    dataset_validity();
    gradient_correctness();
    entropy_oracle();
    statistics_oracle();

    const auto base = train_grid(work / "grid_1l1h", {1, 2, 3, 4, 5, 6}, 50, 1, 1);
    capacity_limit(base);
    logarithmic_decline(base);
    attention_aggregation(base);
    accuracy_attention_coupling(base);
    entropy_ordering(base);

    const auto wide = train_grid(work / "grid_2l4h", {1, 2, 3}, 10, 2, 4);
    architecture_sanity(wide);

    determinism(work / "grid_1l1h", work);
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << fmt::format("{} criteria failed", failures) << std::endl;
  return failures == 0 ? 0 : 1;
}
