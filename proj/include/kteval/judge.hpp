#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kteval/model_gateway.hpp"
#include "kteval/protocol.hpp"

namespace kteval {

class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The judge's reply could not be read as a complete in-range score document.
class JudgeParseError : public JudgeError {
 public:
  using JudgeError::JudgeError;
};

enum class JudgeTarget { Feedback, Recommendation };

std::string judge_target_name(JudgeTarget target);

struct RubricScore {
  int relevance = 0;
  int specificity = 0;
  int correctness = 0;
  int constructiveness = 0;
  int diagnostic = 0;
  std::map<std::string, std::string> explanations;
  JudgeTarget target = JudgeTarget::Feedback;
  std::string instance_id;
};

// Accepts the first balanced braced object in the reply, tolerating prose
// around it. Dimension keys are matched case-insensitively with the aliases
// rubric tables use (accuracy -> correctness, diag -> diagnostic, ...).
// Scores must be integral and in 1..5; anything else throws JudgeParseError.
// No score is ever imputed.
RubricScore parse_score_document(const std::string& reply, JudgeTarget target,
                                 const std::string& instance_id);

RubricScore judge_feedback(const PredictionRecord& record, ModelGateway& judge_model);
RubricScore judge_recommendation(const PredictionRecord& record, ModelGateway& judge_model);

struct JudgeReport {
  double relevance_mean = 0.0;
  double specificity_mean = 0.0;
  double correctness_mean = 0.0;
  double constructiveness_mean = 0.0;
  double diagnostic_mean = 0.0;
  std::size_t n_scored = 0;
  std::size_t parse_failures = 0;
  std::string judge_model;
  bool degenerate = false;
};

JudgeReport aggregate_scores(const std::vector<RubricScore>& scores);

std::string score_to_json_line(const RubricScore& score);
RubricScore score_from_json_line(const std::string& line);

struct JudgeRunResult {
  std::vector<RubricScore> scores;
  std::size_t parse_failures = 0;
  std::size_t transport_failures = 0;
  std::size_t skipped_missing_text = 0;
};

// Scores every record that carries the target text, in parallel, skipping
// and counting the rest. When out_path is set, scores are persisted one JSON
// document per line in instance_id order.
JudgeRunResult judge_records(const std::vector<PredictionRecord>& records,
                             ModelGateway& judge_model, JudgeTarget target,
                             const std::string& out_path = "");

// Table-shaped CSV: one row per target with the five dimension means.
std::string judge_report_csv(const JudgeReport& feedback_report,
                             const JudgeReport& recommendation_report);

}  // namespace kteval
