#include "nback/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "nback/errors.hpp"

namespace nback {

int letter_id(char c) noexcept {
  const auto pos = kAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

char id_letter(int id) {
  if (id < 0 || id >= kAlphabetSize) throw std::out_of_range(fmt::format("token id {} outside alphabet", id));
  return kAlphabet[static_cast<std::size_t>(id)];
}

std::vector<int> TaskInstance::token_ids() const {
  std::vector<int> ids(sequence.size());
  std::transform(sequence.begin(), sequence.end(), ids.begin(), [](char c) { return letter_id(c); });
  return ids;
}

std::vector<int> TaskInstance::targets() const {
  std::vector<int> t(labels.size());
  std::transform(labels.begin(), labels.end(), t.begin(), [](char c) { return c == kMatch ? 1 : 0; });
  return t;
}

std::string labels_from_sequence(std::string_view sequence, int n_back) {
  if (n_back < 1 || n_back >= kSequenceLength) {
    throw ValidationError(fmt::format("n_back {} outside [1, {}]", n_back, kSequenceLength - 1));
  }
  std::string labels(sequence.size(), kNonmatch);
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (letter_id(sequence[i]) < 0) {
      throw ValidationError(fmt::format("character '{}' at position {} is not in the alphabet", sequence[i], i));
    }
    const auto n = static_cast<std::size_t>(n_back);
    if (i >= n && sequence[i] == sequence[i - n]) labels[i] = kMatch;
  }
  return labels;
}

void validate(const TaskInstance& inst) {
  if (inst.sequence.size() != kSequenceLength) {
    throw ValidationError(fmt::format("sequence length {} != {}", inst.sequence.size(), kSequenceLength));
  }
  if (inst.labels.size() != kSequenceLength) {
    throw ValidationError(fmt::format("labels length {} != {}", inst.labels.size(), kSequenceLength));
  }
  for (char c : inst.labels) {
    if (c != kMatch && c != kNonmatch) throw ValidationError(fmt::format("label character '{}' is not m or -", c));
  }
  const auto matches = std::count(inst.labels.begin(), inst.labels.end(), kMatch);
  if (matches != kMatchesPerSequence) {
    throw ValidationError(fmt::format("match count invariant violated: {} matches, expected {}", matches,
                                      kMatchesPerSequence));
  }
  const std::string expected = labels_from_sequence(inst.sequence, inst.n_back);
  if (expected != inst.labels) {
    throw ValidationError(
        fmt::format("label invariant violated: labels '{}' but sequence implies '{}'", inst.labels, expected));
  }
}

TaskInstance generate_instance(int n_back, std::mt19937_64& rng) {
  if (n_back < 1) throw ValidationError(fmt::format("n_back {} must be >= 1", n_back));
  const int eligible = kSequenceLength - n_back;
  if (eligible < kMatchesPerSequence) {
    throw ValidationError(fmt::format("capacity: {}-back leaves {} eligible positions for {} matches", n_back,
                                      std::max(eligible, 0), kMatchesPerSequence));
  }

  // Partial Fisher-Yates over {N..23} picks the match positions.
  std::vector<int> positions(static_cast<std::size_t>(eligible));
  std::iota(positions.begin(), positions.end(), n_back);
  std::vector<bool> is_match(kSequenceLength, false);
  for (int k = 0; k < kMatchesPerSequence; ++k) {
    std::uniform_int_distribution<int> pick(k, eligible - 1);
    std::swap(positions[static_cast<std::size_t>(k)], positions[static_cast<std::size_t>(pick(rng))]);
    is_match[static_cast<std::size_t>(positions[static_cast<std::size_t>(k)])] = true;
  }

  std::uniform_int_distribution<int> any_letter(0, kAlphabetSize - 1);
  std::uniform_int_distribution<int> other_letter(0, kAlphabetSize - 2);
  std::vector<int> ids(kSequenceLength);
  for (int i = 0; i < kSequenceLength; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (i < n_back) {
      ids[ui] = any_letter(rng);
    } else if (is_match[ui]) {
      ids[ui] = ids[ui - static_cast<std::size_t>(n_back)];
    } else {
      const int back = ids[ui - static_cast<std::size_t>(n_back)];
      const int draw = other_letter(rng);
      ids[ui] = draw >= back ? draw + 1 : draw;
    }
  }

  TaskInstance inst;
  inst.n_back = n_back;
  inst.sequence.resize(kSequenceLength);
  inst.labels.resize(kSequenceLength);
  for (std::size_t i = 0; i < kSequenceLength; ++i) {
    inst.sequence[i] = id_letter(ids[i]);
    inst.labels[i] = is_match[i] ? kMatch : kNonmatch;
  }
  return inst;
}

Dataset generate_dataset(int n_back, std::uint64_t seed, int train_n, int test_n) {
  if (train_n < 0 || test_n < 0) throw ValidationError("dataset sizes must be non-negative");
  const auto lo = static_cast<std::uint32_t>(seed);
  const auto hi = static_cast<std::uint32_t>(seed >> 32);
  std::seed_seq train_seq{lo, hi, 0u};
  std::seed_seq test_seq{lo, hi, 1u};
  std::mt19937_64 train_rng(train_seq);
  std::mt19937_64 test_rng(test_seq);

  Dataset ds;
  ds.n_back = n_back;
  ds.train.reserve(static_cast<std::size_t>(train_n));
  ds.test.reserve(static_cast<std::size_t>(test_n));
  for (int i = 0; i < train_n; ++i) ds.train.push_back(generate_instance(n_back, train_rng));
  for (int i = 0; i < test_n; ++i) ds.test.push_back(generate_instance(n_back, test_rng));
  return ds;
}

std::string to_jsonl_line(const TaskInstance& inst) {
  return fmt::format(R"({{"n_back": {}, "sequence": "{}", "labels": "{}"}})", inst.n_back, inst.sequence, inst.labels);
}

void save_instances(const std::vector<TaskInstance>& instances, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  for (const auto& inst : instances) out << to_jsonl_line(inst) << '\n';
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

std::vector<TaskInstance> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::vector<TaskInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    TaskInstance inst;
    try {
      const auto j = nlohmann::json::parse(line);
      inst.n_back = j.at("n_back").get<int>();
      inst.sequence = j.at("sequence").get<std::string>();
      inst.labels = j.at("labels").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.filename().string(), e.what()), lineno);
    }
    try {
      validate(inst);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{} line {}: {}", path.filename().string(), lineno, e.what()));
    }
    if (!out.empty() && out.front().n_back != inst.n_back) {
      throw ValidationError(fmt::format("{} line {}: n_back {} differs from {}", path.filename().string(), lineno,
                                        inst.n_back, out.front().n_back));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::filesystem::path train_file(const std::filesystem::path& dir, int n_back) {
  return dir / fmt::format("nback{}_train.jsonl", n_back);
}

std::filesystem::path test_file(const std::filesystem::path& dir, int n_back) {
  return dir / fmt::format("nback{}_test.jsonl", n_back);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_instances(ds.train, train_file(dir, ds.n_back));
  save_instances(ds.test, test_file(dir, ds.n_back));
}

Dataset load_dataset(const std::filesystem::path& dir, int n_back) {
  Dataset ds;
  ds.n_back = n_back;
  ds.train = load_instances(train_file(dir, n_back));
  ds.test = load_instances(test_file(dir, n_back));
  for (const auto* split : {&ds.train, &ds.test}) {
    if (!split->empty() && split->front().n_back != n_back) {
      throw ValidationError(fmt::format("dataset file holds {}-back instances, expected {}", split->front().n_back, n_back));
    }
  }
  return ds;
}

}  // namespace nback
