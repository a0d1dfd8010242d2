#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kteval {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One answered question in a learner's timeline. `kc_ids` keeps source
/// order; `selected_option` is absent for rows without option information.
struct Interaction {
  std::string question_id;
  std::vector<std::string> kc_ids;
  std::optional<std::string> selected_option;
  int correct = 0;  // 0 or 1

  bool operator==(const Interaction&) const = default;
};

struct LearnerSequence {
  std::string learner_id;
  std::vector<Interaction> interactions;  // time-ordered, length >= 1

  bool operator==(const LearnerSequence&) const = default;
};

struct TargetItem {
  std::string question_id;
  std::vector<std::string> kc_ids;

  bool operator==(const TargetItem&) const = default;
};

/// A bounded history window plus the immediately following question.
struct EvalInstance {
  std::string learner_id;
  std::vector<Interaction> history;  // most recent last, 1 <= size <= H
  TargetItem target;
  int target_correct = 0;
  std::string instance_id;  // stable key derived from (learner_id, position)

  bool operator==(const EvalInstance&) const = default;
};

/// Per-(question, option) selection frequencies computed from the training
/// split. A question absent from training has no entry at all; an observed
/// question with a never-selected option reports frequency 0.
class OptionWeightTable {
 public:
  void set(const std::string& question_id, const std::string& option, double frequency);
  void mark_question_seen(const std::string& question_id);

  bool question_seen(const std::string& question_id) const;
  std::optional<double> lookup(const std::string& question_id, const std::string& option) const;

  const std::map<std::pair<std::string, std::string>, double>& frequencies() const {
    return frequencies_;
  }

 private:
  std::map<std::pair<std::string, std::string>, double> frequencies_;
  std::map<std::string, bool> seen_questions_;
};

enum class DatasetFormat { Assist09, Dbekt22, Ednet };

DatasetFormat parse_dataset_format(const std::string& tag);
std::string dataset_format_name(DatasetFormat format);

struct ParseResult {
  std::vector<LearnerSequence> sequences;  // sorted by learner_id
  std::size_t dropped_rows = 0;            // rows with missing/invalid correctness
  std::size_t merged_duplicates = 0;       // assist09 rows merged into an existing interaction
};

// Column schemas are documented in docs/data_formats.md. For Ednet the
// source is a directory of per-learner CSV files; for the others a single
// CSV file.
ParseResult parse_dataset(DatasetFormat format, const std::filesystem::path& source);

// Learner-level partition; |train| = round(ratio * N). Deterministic in seed.
std::pair<std::vector<LearnerSequence>, std::vector<LearnerSequence>> split_learners(
    const std::vector<LearnerSequence>& sequences, double ratio, std::uint64_t seed);

// Uniform sample of n learners without replacement, deterministic in seed.
std::vector<LearnerSequence> subsample_learners(const std::vector<LearnerSequence>& sequences,
                                                std::size_t n, std::uint64_t seed);

// One instance per position with at least one prior interaction, history
// capped at `history_len`. `last_k_positions` > 0 keeps only the final k
// positions per learner.
std::vector<EvalInstance> build_instances(const std::vector<LearnerSequence>& sequences,
                                          std::size_t history_len,
                                          std::size_t last_k_positions = 0);

// Seed-deterministic uniform cap on the instance list; keeps source order.
std::vector<EvalInstance> cap_instances(const std::vector<EvalInstance>& instances,
                                        std::size_t cap, std::uint64_t seed);

OptionWeightTable compute_option_stats(const std::vector<LearnerSequence>& train_sequences);

// Canonical normalized interchange: one JSON document per learner, one line
// each, integer-free of float formatting concerns and byte-stable.
std::string to_normalized_jsonl(const std::vector<LearnerSequence>& sequences);
std::vector<LearnerSequence> from_normalized_jsonl(const std::string& jsonl);

}  // namespace kteval
