#pragma once

// Aggregates over run directories: accuracy by architecture and N, entropy
// by N, accuracy-vs-attention pairs, logarithmic accuracy fit.

#include <filesystem>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "nback/matrix.hpp"
#include "nback/run_io.hpp"

namespace nback::analysis {

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;  // sample sd / sqrt(n); 0 when n < 2
  std::size_t n = 0;
};

MeanSem mean_sem(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct LogFit {
  double a = 0.0;  // intercept
  double b = 0.0;  // slope on ln x
  double r_squared = 0.0;
};

// Least squares y = a + b ln x. Needs two distinct positive x.
LogFit log_fit(std::span<const double> xs, std::span<const double> ys);

struct ArchKey {
  int layers = 1;
  int heads = 1;
  int n_back = 1;
  auto operator<=>(const ArchKey&) const = default;
};

struct AccuracyGroup {
  MeanSem accuracy;
  std::size_t failures = 0;
  std::vector<double> per_run;  // final test accuracy of successful runs
};

std::map<ArchKey, AccuracyGroup> accuracy_by_group(const std::vector<RunRecord>& runs);

struct DiagonalProfile {
  int n_back = 0;
  int epoch = 0;
  std::vector<double> values;  // A[i][i-N], i = N..T-1
};

DiagonalProfile diagonal_profile(const Matrix<float>& attention, int n_back, int epoch);

struct AccuracyAttentionPair {
  int seed = 0;
  int epoch = 0;
  int position = 0;
  double attention = 0.0;  // test-mean A[i][i-N]
  double accuracy = 0.0;   // accuracy at position i
};

// One tuple per (run, epoch, position i >= N), reading layer 0 head 0.
// All runs must share n_back.
std::vector<AccuracyAttentionPair> accuracy_attention_pairs(const std::vector<RunRecord>& runs);

struct EntropySummary {
  int n_back = 0;
  MeanSem entropy;  // over runs of the per-run final-epoch mean H_N
  MeanSem accuracy;
  std::vector<double> per_run;
};

// Per N, over successful runs with the given architecture, for one
// (layer, head). Ordered by N; throws if an N group is empty.
std::vector<EntropySummary> entropy_summary(const std::vector<RunRecord>& runs, int layers = 1, int heads = 1,
                                            int layer = 0, int head = 0);

// Runs matching an architecture and N, successful only.
std::vector<RunRecord> select(const std::vector<RunRecord>& runs, int layers, int heads, int n_back);

// Mean of the final-epoch diagonal mass over runs.
double mean_final_diagonal_mass(const std::vector<RunRecord>& runs);

// Writes fig2a.csv, fig2b.csv, fig3_epoch{e}.svg, fig4_N{n}.csv and fig5.csv.
void write_analysis(const std::vector<RunRecord>& runs, const std::filesystem::path& out_dir);

}  // namespace nback::analysis
