#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kteval/dataset.hpp"
#include "kteval/model_gateway.hpp"
#include "kteval/prompting.hpp"

namespace kteval {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OutcomeKind { Correct, Wrong, Invalid };
enum class InvalidReason { None, ParseFail, Truncated, TransportFailure };

struct SampleOutcome {
  OutcomeKind kind = OutcomeKind::Invalid;
  InvalidReason reason = InvalidReason::None;

  bool valid() const { return kind != OutcomeKind::Invalid; }
  bool operator==(const SampleOutcome&) const = default;
};

std::string outcome_to_string(const SampleOutcome& outcome);
SampleOutcome outcome_from_string(const std::string& encoded);

// Case-insensitive scan for the last standalone `correct` / `wrong` token.
// `incorrect` is its own token and counts as Wrong; substring matches do not
// count, so "incorrectly" decides nothing.
SampleOutcome parse_single_word(const std::string& answer_text);

struct UnifiedParse {
  SampleOutcome outcome;
  std::optional<std::string> feedback;
  std::optional<std::string> recommendation;
};

// Order-insensitive scan for PREDICTION / FEEDBACK / RECOMMENDATION sections.
// A missing section leaves its field absent; the prediction falls back to a
// whole-text scan when no PREDICTION section exists.
UnifiedParse parse_unified(const std::string& answer_text, OutputMode mode);

struct Aggregate {
  double empirical_p = 0.5;
  OutcomeKind majority_label = OutcomeKind::Correct;
  bool degenerate = false;
  bool tie_break_applied = false;
};

// empirical_p = #Correct / #valid; zero valid samples force p = 0.5 with the
// degenerate flag. Majority is over valid outcomes; exact ties resolve to
// Correct and are flagged.
Aggregate aggregate_outcomes(const std::vector<SampleOutcome>& outcomes);

struct PredictionRecord {
  std::string instance_id;
  int ground_truth = 0;
  std::vector<SampleOutcome> outcomes;
  double empirical_p = 0.5;
  OutcomeKind majority_label = OutcomeKind::Correct;
  bool degenerate = false;
  bool tie_break_applied = false;
  std::optional<std::string> feedback_text;
  std::optional<std::string> recommendation_text;
  // Sample whose generated text was kept for judging (first valid sample),
  // along with that sample's own prediction word; -1 when no sample was valid.
  int selected_sample_index = -1;
  std::string prediction_word;
  // Reasoning trace per sample, index-aligned with outcomes.
  std::vector<std::string> traces;
  // Variant-rendered history block, persisted so judging and trace analysis
  // can replay from records alone.
  std::string history_text;
  std::string config_fingerprint;
};

std::string record_to_json_line(const PredictionRecord& record);
PredictionRecord record_from_json_line(const std::string& line);

struct RunCounters {
  std::uint64_t completions = 0;
  std::uint64_t transport_failures = 0;
  std::uint64_t parse_failures = 0;
  std::uint64_t truncated_samples = 0;
  std::int64_t wall_ms = 0;
};

struct RunRecord {
  std::string run_id;
  std::string dataset_tag;
  PromptVariant variant = PromptVariant::NoOption;
  OutputMode mode = OutputMode::PredOnly;
  int history_length = 0;
  int samples_per_instance = 0;
  std::string template_version;
  ModelConfig model;
  std::vector<PredictionRecord> records;
  RunCounters counters;
};

std::string describe_fingerprint(const ModelConfig& model, PromptVariant variant,
                                 OutputMode mode, int samples, int history_length,
                                 const std::string& dataset_tag);

PredictionRecord run_instance(ModelGateway& gateway, const EvalInstance& instance,
                              PromptVariant variant, OutputMode mode, int samples,
                              const OptionWeightTable* weights, double weight_portion,
                              const std::string& fingerprint);

struct SuiteOptions {
  PromptVariant variant = PromptVariant::NoOption;
  OutputMode mode = OutputMode::PredOnly;
  int samples = 10;
  int history_length = 0;
  double weight_portion = 1.0;
  std::string dataset_tag;
  std::string run_id;
  // Directory for records.jsonl + manifest.json; empty runs in memory only.
  std::string run_dir;
  bool resume = false;
  // Called after each persisted record; exceptions abort the suite, which is
  // how the crash-injection tests simulate a mid-run kill.
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Runs every instance not already persisted, with bounded parallelism taken
// from the gateway config. Records are appended to disk as they finish and
// rewritten in instance_id order on completion, so reruns after a crash
// converge to the same bytes as an uninterrupted run.
RunRecord run_suite(ModelGateway& gateway, const std::vector<EvalInstance>& instances,
                    const OptionWeightTable* weights, const SuiteOptions& options);

std::vector<PredictionRecord> load_records(const std::string& records_path);

}  // namespace kteval
