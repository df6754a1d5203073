#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "nback/dataset.hpp"
#include "nback/errors.hpp"

using namespace nback;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("nback_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("labels_from_sequence follows the definition") {
  CHECK(labels_from_sequence("bbcc", 1) == "-m-m");
  CHECK(labels_from_sequence("bcbcb", 2) == "--mmm");
  CHECK_THROWS_AS(labels_from_sequence("bca", 1), ValidationError);  // 'a' is not in the alphabet
  CHECK_THROWS_AS(labels_from_sequence("bcb", 0), ValidationError);
}

TEST_CASE("validate rejects wrong length and wrong match count") {
  std::mt19937_64 rng(1);
  auto inst = generate_instance(2, rng);
  CHECK_NOTHROW(validate(inst));

  auto short_seq = inst;
  short_seq.sequence.pop_back();
  short_seq.labels.pop_back();
  CHECK_THROWS_AS(validate(short_seq), ValidationError);

  auto bad = inst;
  bad.labels[bad.labels.find('m')] = '-';
  CHECK_THROWS_WITH_AS(validate(bad), doctest::Contains("match count"), ValidationError);
}

TEST_CASE("generated instances satisfy every invariant") {
  std::mt19937_64 rng(42);
  for (int n = 1; n <= 6; ++n) {
    int violations = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto inst = generate_instance(n, rng);
      if (inst.labels != labels_from_sequence(inst.sequence, n)) ++violations;
      if (std::count(inst.labels.begin(), inst.labels.end(), 'm') != 8) ++violations;
      for (int p = 0; p < n; ++p) violations += inst.labels[static_cast<std::size_t>(p)] != '-';
    }
    CHECK_MESSAGE(violations == 0, "N=" << n);
  }
}

TEST_CASE("six-back leaves the first six positions nonmatch") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) CHECK(generate_instance(6, rng).labels.substr(0, 6) == "------");
}

TEST_CASE("capacity guard for N that leaves fewer than 8 eligible positions") {
  std::mt19937_64 rng(3);
  CHECK_NOTHROW(generate_instance(16, rng));
  CHECK_THROWS_WITH_AS(generate_instance(17, rng), doctest::Contains("capacity"), ValidationError);
}

TEST_CASE("match positions are uniform over the eligible range") {
  // Each position in {N..23} is a match with probability 8 / (24 - N).
  constexpr int kSamples = 100000;
  for (int n : {1, 3, 6}) {
    std::mt19937_64 rng(1000 + n);
    std::vector<double> counts(kSequenceLength, 0.0);
    for (int s = 0; s < kSamples; ++s) {
      const auto inst = generate_instance(n, rng);
      for (std::size_t p = 0; p < inst.labels.size(); ++p) counts[p] += inst.labels[p] == 'm';
    }
    const double expected = kSamples * 8.0 / (24 - n);
    double chi2 = 0.0;
    for (int p = n; p < kSequenceLength; ++p) {
      const double d = counts[static_cast<std::size_t>(p)] - expected;
      chi2 += d * d / expected;
    }
    // Marginal counts always total 8 * kSamples, so one degree of freedom is lost.
    boost::math::chi_squared dist(24 - n - 1);
    const double p_value = boost::math::cdf(boost::math::complement(dist, chi2));
    CHECK_MESSAGE(p_value > 0.001, "N=" << n << " chi2=" << chi2);
  }
}

TEST_CASE("nonmatch letters never equal the N-back letter but may repeat at other offsets") {
  std::mt19937_64 rng(9);
  bool other_offset_repeat = false;
  for (int i = 0; i < 2000; ++i) {
    const auto inst = generate_instance(2, rng);
    for (std::size_t p = 2; p < inst.sequence.size(); ++p) {
      if (inst.labels[p] == '-') CHECK(inst.sequence[p] != inst.sequence[p - 2]);
      if (inst.sequence[p] == inst.sequence[p - 1]) other_offset_repeat = true;
    }
  }
  CHECK(other_offset_repeat);
}

TEST_CASE("generate_dataset is deterministic and sized 800/200") {
  const auto a = generate_dataset(3, 7);
  const auto b = generate_dataset(3, 7);
  CHECK(a == b);
  CHECK(a.train.size() == 800);
  CHECK(a.test.size() == 200);
  CHECK(a.train != generate_dataset(3, 8).train);
  for (const auto& inst : a.train) CHECK_NOTHROW(validate(inst));
  // Train and test come from different streams.
  CHECK(a.train.front() != a.test.front());
}

TEST_CASE("generator does not deduplicate") {
  // With a small alphabet-constrained draw, 10k sequences of length 24 are
  // still almost surely distinct; the check is that no uniqueness filter
  // exists, so a tiny train split with forced collisions would keep them.
  const auto ds = generate_dataset(1, 11);
  std::set<std::string> seqs;
  for (const auto& inst : ds.train) seqs.insert(inst.sequence);
  CHECK(seqs.size() <= ds.train.size());
  CHECK(ds.train.size() == 800);
}

TEST_CASE("save and load round-trip") {
  const auto dir = temp_dir("roundtrip");
  const auto ds = generate_dataset(4, 123, 50, 20);
  save_dataset(ds, dir);
  CHECK(fs::exists(dir / "nback4_train.jsonl"));
  CHECK(fs::exists(dir / "nback4_test.jsonl"));
  CHECK(load_dataset(dir, 4) == ds);

  std::ifstream in(dir / "nback4_train.jsonl");
  std::string first;
  std::getline(in, first);
  CHECK(first == to_jsonl_line(ds.train.front()));
  CHECK(first.starts_with(R"({"n_back": 4, "sequence": ")"));
}

TEST_CASE("load rejects invariant violations and truncated lines") {
  const auto dir = temp_dir("bad");
  const auto ds = generate_dataset(1, 5, 3, 1);

  auto bad = ds.train;
  bad[1].labels[bad[1].labels.find('m')] = '-';  // 7 matches
  std::ofstream(dir / "seven.jsonl") << to_jsonl_line(bad[0]) << '\n' << to_jsonl_line(bad[1]) << '\n';
  CHECK_THROWS_WITH_AS(load_instances(dir / "seven.jsonl"), doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_WITH_AS(load_instances(dir / "seven.jsonl"), doctest::Contains("match count"), ValidationError);

  const auto line = to_jsonl_line(ds.train[2]);
  std::ofstream(dir / "trunc.jsonl") << to_jsonl_line(ds.train[0]) << '\n' << line.substr(0, line.size() / 2);
  try {
    load_instances(dir / "trunc.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
