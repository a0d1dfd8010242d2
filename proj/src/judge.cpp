#include "kteval/judge.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>

#include <json.hpp>

#include "kteval/util.hpp"

namespace kteval {
namespace {

using ordered_json = nlohmann::ordered_json;

// First balanced top-level object, tracking string literals so braces inside
// quoted text do not confuse the depth count.
std::optional<std::string> first_braced_object(const std::string& text) {
  for (std::size_t start = text.find('{'); start != std::string::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        --depth;
        if (depth == 0) {
          return text.substr(start, i - start + 1);
        }
      }
    }
  }
  return std::nullopt;
}

std::string canonical_dimension(const std::string& key) {
  const std::string k = to_lower(trim(key));
  if (k == "relevance" || k == "rel") {
    return "relevance";
  }
  if (k == "specificity" || k == "spec") {
    return "specificity";
  }
  if (k == "correctness" || k == "accuracy" || k == "corr") {
    return "correctness";
  }
  if (k == "constructiveness" || k == "struct") {
    return "constructiveness";
  }
  if (k == "diagnostic_quality" || k == "diagnostic quality" || k == "diagnostic" ||
      k == "diag") {
    return "diagnostic";
  }
  return "";
}

std::optional<int> integral_score(const ordered_json& value) {
  if (value.is_number_integer()) {
    return value.get<int>();
  }
  if (value.is_number_float()) {
    const double d = value.get<double>();
    if (d == std::floor(d)) {
      return static_cast<int>(d);
    }
  }
  return std::nullopt;
}

std::string ground_truth_word(int y) { return y == 1 ? "correct" : "wrong"; }

JudgeSlots slots_from_record(const PredictionRecord& record, const std::string& text) {
  JudgeSlots slots;
  slots.instance_id = record.instance_id;
  slots.student_history = record.history_text;
  slots.prediction = record.prediction_word.empty() ? "unknown" : record.prediction_word;
  slots.ground_truth = ground_truth_word(record.ground_truth);
  slots.generated_text = text;
  return slots;
}

}  // namespace

std::string judge_target_name(JudgeTarget target) {
  return target == JudgeTarget::Feedback ? "feedback" : "recommendation";
}

RubricScore parse_score_document(const std::string& reply, JudgeTarget target,
                                 const std::string& instance_id) {
  const std::optional<std::string> braced = first_braced_object(reply);
  if (!braced) {
    throw JudgeParseError("no braced score document in judge reply");
  }
  ordered_json doc;
  try {
    doc = ordered_json::parse(*braced);
  } catch (const std::exception& e) {
    throw JudgeParseError(std::string("score document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw JudgeParseError("score document is not an object");
  }

  RubricScore score;
  score.target = target;
  score.instance_id = instance_id;
  std::map<std::string, int> found;
  for (const auto& [key, value] : doc.items()) {
    const std::string dim = canonical_dimension(key);
    if (dim.empty()) {
      continue;
    }
    std::optional<int> parsed;
    if (value.is_object()) {
      if (value.contains("score")) {
        parsed = integral_score(value["score"]);
      }
      if (value.contains("explanation") && value["explanation"].is_string()) {
        score.explanations[dim] = value["explanation"].get<std::string>();
      }
    } else {
      parsed = integral_score(value);
    }
    if (!parsed) {
      throw JudgeParseError("dimension '" + dim + "' has no integral score");
    }
    if (*parsed < 1 || *parsed > 5) {
      throw JudgeParseError("dimension '" + dim + "' scored " + std::to_string(*parsed) +
                            ", outside 1..5");
    }
    found[dim] = *parsed;
  }
  static const char* required[] = {"relevance", "specificity", "correctness",
                                   "constructiveness", "diagnostic"};
  for (const char* dim : required) {
    if (found.find(dim) == found.end()) {
      throw JudgeParseError(std::string("score document is missing '") + dim + "'");
    }
  }
  score.relevance = found["relevance"];
  score.specificity = found["specificity"];
  score.correctness = found["correctness"];
  score.constructiveness = found["constructiveness"];
  score.diagnostic = found["diagnostic"];
  return score;
}

RubricScore judge_feedback(const PredictionRecord& record, ModelGateway& judge_model) {
  if (!record.feedback_text) {
    throw JudgeError("record " + record.instance_id + " has no feedback text");
  }
  const RenderedPrompt prompt =
      render_feedback_judge_prompt(slots_from_record(record, *record.feedback_text));
  const Completion completion = judge_model.complete(prompt, 0);
  return parse_score_document(completion.answer_text, JudgeTarget::Feedback,
                              record.instance_id);
}

RubricScore judge_recommendation(const PredictionRecord& record, ModelGateway& judge_model) {
  if (!record.recommendation_text) {
    throw JudgeError("record " + record.instance_id + " has no recommendation text");
  }
  const RenderedPrompt prompt = render_recommendation_judge_prompt(
      slots_from_record(record, *record.recommendation_text));
  const Completion completion = judge_model.complete(prompt, 0);
  return parse_score_document(completion.answer_text, JudgeTarget::Recommendation,
                              record.instance_id);
}

JudgeReport aggregate_scores(const std::vector<RubricScore>& scores) {
  JudgeReport report;
  report.n_scored = scores.size();
  if (scores.empty()) {
    report.degenerate = true;
    return report;
  }
  for (const RubricScore& score : scores) {
    report.relevance_mean += score.relevance;
    report.specificity_mean += score.specificity;
    report.correctness_mean += score.correctness;
    report.constructiveness_mean += score.constructiveness;
    report.diagnostic_mean += score.diagnostic;
  }
  const double n = static_cast<double>(scores.size());
  report.relevance_mean /= n;
  report.specificity_mean /= n;
  report.correctness_mean /= n;
  report.constructiveness_mean /= n;
  report.diagnostic_mean /= n;
  return report;
}

std::string score_to_json_line(const RubricScore& score) {
  ordered_json doc;
  doc["instance_id"] = score.instance_id;
  doc["target"] = judge_target_name(score.target);
  doc["relevance"] = score.relevance;
  doc["specificity"] = score.specificity;
  doc["correctness"] = score.correctness;
  doc["constructiveness"] = score.constructiveness;
  doc["diagnostic"] = score.diagnostic;
  ordered_json explanations = ordered_json::object();
  for (const auto& [dim, text] : score.explanations) {
    explanations[dim] = text;
  }
  doc["explanations"] = std::move(explanations);
  return doc.dump();
}

RubricScore score_from_json_line(const std::string& line) {
  const ordered_json doc = ordered_json::parse(line);
  RubricScore score;
  score.instance_id = doc.at("instance_id").get<std::string>();
  score.target = doc.at("target").get<std::string>() == "feedback"
                     ? JudgeTarget::Feedback
                     : JudgeTarget::Recommendation;
  score.relevance = doc.at("relevance").get<int>();
  score.specificity = doc.at("specificity").get<int>();
  score.correctness = doc.at("correctness").get<int>();
  score.constructiveness = doc.at("constructiveness").get<int>();
  score.diagnostic = doc.at("diagnostic").get<int>();
  for (const auto& [dim, text] : doc.at("explanations").items()) {
    score.explanations[dim] = text.get<std::string>();
  }
  return score;
}

JudgeRunResult judge_records(const std::vector<PredictionRecord>& records,
                             ModelGateway& judge_model, JudgeTarget target,
                             const std::string& out_path) {
  JudgeRunResult result;
  std::vector<const PredictionRecord*> eligible;
  for (const PredictionRecord& record : records) {
    const std::optional<std::string>& text = target == JudgeTarget::Feedback
                                                 ? record.feedback_text
                                                 : record.recommendation_text;
    if (text && !trim(*text).empty()) {
      eligible.push_back(&record);
    } else {
      ++result.skipped_missing_text;
    }
  }

  std::mutex sink_mutex;
  std::exception_ptr first_error;
  const int threads = std::max(1, judge_model.config().max_parallel);
  const std::int64_t n = static_cast<std::int64_t>(eligible.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      const PredictionRecord& record = *eligible[static_cast<std::size_t>(i)];
      RubricScore score = target == JudgeTarget::Feedback
                              ? judge_feedback(record, judge_model)
                              : judge_recommendation(record, judge_model);
      std::lock_guard<std::mutex> lock(sink_mutex);
      result.scores.push_back(std::move(score));
    } catch (const JudgeParseError&) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      ++result.parse_failures;
    } catch (const TransportError&) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      ++result.transport_failures;
    } catch (...) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      if (!first_error) {
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }

  std::sort(result.scores.begin(), result.scores.end(),
            [](const RubricScore& a, const RubricScore& b) {
              return a.instance_id < b.instance_id;
            });
  if (!out_path.empty()) {
    std::string lines;
    for (const RubricScore& score : result.scores) {
      lines += score_to_json_line(score);
      lines += '\n';
    }
    write_file_atomic(out_path, lines);
  }
  return result;
}

std::string judge_report_csv(const JudgeReport& feedback_report,
                             const JudgeReport& recommendation_report) {
  const auto row = [](const char* name, const JudgeReport& report) {
    char buffer[256];
    std::snprintf(buffer, sizeof(buffer), "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%zu,%zu\n", name,
                  report.relevance_mean, report.specificity_mean, report.correctness_mean,
                  report.constructiveness_mean, report.diagnostic_mean, report.n_scored,
                  report.parse_failures);
    return std::string(buffer);
  };
  std::string csv = "target,rel,spec,corr,struct,diag,n,parse_failures\n";
  csv += row("feedback", feedback_report);
  csv += row("recommendation", recommendation_report);
  return csv;
}

}  // namespace kteval
