#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nback/run_io.hpp"
#include "nback/stats.hpp"

namespace nback {

struct PairwiseComparison {
  int n_a = 0;
  int n_b = 0;
  stats::MannWhitneyResult result;
};

struct StatsTable {
  stats::KruskalResult kruskal;
  std::vector<PairwiseComparison> pairs;
  std::size_t total_runs = 0;
};

// Final test accuracy of successful (layers, heads) runs, grouped by the
// listed N values; Kruskal-Wallis across groups and Mann-Whitney per pair.
StatsTable accuracy_tests(const std::vector<RunRecord>& runs, const std::vector<int>& n_values, int layers = 1,
                          int heads = 1);

// table1.csv: a Kruskal-Wallis header block followed by one row per pair.
void write_table1(const StatsTable& table, const std::filesystem::path& path);

// Markdown summary of every diagnostic over the runs under a directory.
std::string render_report(const std::vector<RunRecord>& runs);

}  // namespace nback
