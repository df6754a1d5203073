#pragma once

// N-back task sequences: generation, validation and JSON Lines persistence.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace nback {

inline constexpr std::string_view kAlphabet = "bcdfghjklnpqrstvwxyz";
inline constexpr int kAlphabetSize = 20;
inline constexpr int kSequenceLength = 24;
inline constexpr int kMatchesPerSequence = 8;
inline constexpr char kMatch = 'm';
inline constexpr char kNonmatch = '-';

// Token id of a letter, or -1 if the letter is not in the alphabet.
int letter_id(char c) noexcept;
char id_letter(int id);

struct TaskInstance {
  int n_back = 0;
  std::string sequence;
  std::string labels;

  std::vector<int> token_ids() const;
  // 1 for match, 0 for nonmatch.
  std::vector<int> targets() const;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct Dataset {
  int n_back = 0;
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> test;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Match labels for `sequence` at offset n_back. Length is not restricted to
// 24 so short sequences can be labelled directly; validate() enforces 24.
std::string labels_from_sequence(std::string_view sequence, int n_back);

// Throws ValidationError naming the first violated invariant.
void validate(const TaskInstance& instance);

// Draws one instance: a uniform 8-subset of positions {N..23} are matches;
// nonmatch letters avoid only the letter N back.
TaskInstance generate_instance(int n_back, std::mt19937_64& rng);

// Train and test draw from independent streams derived from `seed`.
Dataset generate_dataset(int n_back, std::uint64_t seed, int train_n = 800, int test_n = 200);

std::string to_jsonl_line(const TaskInstance& instance);
void save_instances(const std::vector<TaskInstance>& instances, const std::filesystem::path& path);
std::vector<TaskInstance> load_instances(const std::filesystem::path& path);

std::filesystem::path train_file(const std::filesystem::path& dir, int n_back);
std::filesystem::path test_file(const std::filesystem::path& dir, int n_back);

// Writes nback{N}_train.jsonl and nback{N}_test.jsonl into dir.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir, int n_back);

}  // namespace nback
