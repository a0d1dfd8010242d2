#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "kteval/dataset.hpp"

namespace kteval {

struct PromptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PromptVariant { NoOption, Option, Weight };
enum class OutputMode { PredOnly, FB, Rec, FBRec };

PromptVariant parse_variant(const std::string& name);
std::string variant_name(PromptVariant variant);
OutputMode parse_mode(const std::string& name);
std::string mode_name(OutputMode mode);

inline constexpr const char* kTemplateVersion = "v1";

struct RenderedPrompt {
  std::string text;
  std::optional<PromptVariant> variant;
  std::optional<OutputMode> mode;
  std::string instance_id;
  std::string template_version = kTemplateVersion;
};

/// Bucketed textual descriptor for an option-selection frequency.
/// [0,0.1) very low, [0.1,0.3) low, [0.3,0.5) medium, [0.5,0.8) high,
/// [0.8,1] very high; absent maps to the literal "NaN".
struct WeightDescriptor {
  std::string label;
  std::optional<double> frequency;
};

WeightDescriptor describe_weight(std::optional<double> frequency);

/// Fills the prediction template for the given variant and output mode.
/// `weights` is required exactly for the Weight variant. `weight_portion`
/// in [0,1] annotates only the most recent fraction of the history; older
/// entries render as "NaN".
RenderedPrompt render_prediction_prompt(const EvalInstance& instance, PromptVariant variant,
                                        OutputMode mode,
                                        const OptionWeightTable* weights = nullptr,
                                        double weight_portion = 1.0);

/// The numbered history lines as they appear in the prediction prompt;
/// reused as the STUDENT_HISTORY slot of the judge prompts.
std::string render_history_block(const EvalInstance& instance, PromptVariant variant,
                                 const OptionWeightTable* weights = nullptr,
                                 double weight_portion = 1.0);

/// Slot values for the judge prompts; assembled by the judge module from a
/// prediction record.
struct JudgeSlots {
  std::string instance_id;
  std::string student_history;
  std::string prediction;    // "correct" or "wrong"
  std::string ground_truth;  // "correct" or "wrong"
  std::string generated_text;
};

RenderedPrompt render_feedback_judge_prompt(const JudgeSlots& slots);
RenderedPrompt render_recommendation_judge_prompt(const JudgeSlots& slots);

RenderedPrompt render_trace_label_prompt(const std::string& segment_text);

/// Embedded template bytes keyed by file name; the committed files under
/// templates/v1/ must match these exactly (enforced by a test).
const std::map<std::string, std::string>& template_texts();

}  // namespace kteval
