#include "kteval/prompting.hpp"

#include <cmath>

#include "kteval/util.hpp"

namespace kteval {
namespace {

constexpr const char* kPredictionNoOption =
    R"TPL(Analyze the student's problem-solving history and predict their performance on the next question.

Student's problem-solving history:
1. Question ID sequence: {question_ids}
2. KC ID sequence: {kc_ids} (Note: This is a list of KC IDs associated with the next question. For example, if next_kc_id is {3, 72}, it means the next question involves KC IDs 3 and 72.)
3. Correctness sequence: {answer_sequence}

Next question details:
1. Next question ID: {next_question_id}
2. Next question's KC ID: {next_kc_id}

Based on the above information, predict whether the student will answer the next question
(ID: {next_question_id}, KC ID: {next_kc_id}) correctly (`correct`) or incorrectly (`wrong`).

Consider the following when making your prediction:
1. The student's overall correctness pattern.
2. The complexity and difficulty levels of the questions and KC IDs.
3. Recent trends in the student's performance.
4. The student's progression and knowledge improvement over time.
5. The student's current knowledge state for each KC and how it matches the KC IDs in the next question.

{output_instruction}
)TPL";

constexpr const char* kPredictionOption =
    R"TPL(Analyze the student's problem-solving history and predict their performance on the next question.

Student's problem-solving history:
1. Question ID sequence: {question_ids}
2. KC ID sequence: {kc_ids} (Note: This is a list of KC IDs associated with the next question. For example, if next_kc_id is {3, 72}, it means the next question involves KC IDs 3 and 72.)
3. Selected option sequence: {option_sequence}
4. Correctness sequence: {answer_sequence}

Next question details:
1. Next question ID: {next_question_id}
2. Next question's KC ID: {next_kc_id}

Based on the above information, predict whether the student will answer the next question
(ID: {next_question_id}, KC ID: {next_kc_id}) correctly (`correct`) or incorrectly (`wrong`).

Consider the following when making your prediction:
1. The student's overall correctness pattern.
2. The complexity and difficulty levels of the questions and KC IDs.
3. How the selected options reflect their weight on the student's understanding and confidence.
4. Recent trends in the student's performance.
5. The student's progression and knowledge improvement over time.
6. The student's current knowledge state for each KC and how it matches the KC IDs in the next question.

{output_instruction}
)TPL";

constexpr const char* kPredictionWeight =
    R"TPL(Analyze the student's problem-solving history and predict their performance on the next question.

Student's problem-solving history:
1. Question ID sequence: {question_ids}
2. KC ID sequence: {kc_ids} (Note: This is a list of KC IDs associated with the next question. For example, if next_kc_id is {3, 72}, it means the next question involves KC IDs 3 and 72.)
3. Selected option sequence: {option_sequence}
4. Selected option weights: {option_weights}
5. Correctness sequence: {answer_sequence}

Next question details:
1. Next question ID: {next_question_id}
2. Next question's KC ID: {next_kc_id}

Based on the above information, predict whether the student will answer the next question
(ID: {next_question_id}, KC ID: {next_kc_id}) correctly (`correct`) or incorrectly (`wrong`).

Consider the following when making your prediction:
1. The student's overall correctness pattern.
2. The complexity and difficulty levels of the questions and KC IDs.
3. How the selected options reflect their weight on the student's understanding and confidence.
4. Recent trends in the student's performance.
5. The student's progression and knowledge improvement over time.
6. The student's current knowledge state for each KC and how it matches the KC IDs in the next question.
7. Ignore any NaN values in the option weights.

{output_instruction}
)TPL";

constexpr const char* kOutputPredOnly =
    R"TPL(Output only the single word [`correct` or `wrong`]. No other words or punctuation should be included.)TPL";

constexpr const char* kOutputFb =
    R"TPL(Respond with exactly the following labeled sections, each starting on its own line:
PREDICTION: a single word, `correct` or `wrong`.
FEEDBACK: personalized feedback (2-4 sentences) describing the student's recent performance, grounded in the history above.)TPL";

constexpr const char* kOutputRec =
    R"TPL(Respond with exactly the following labeled sections, each starting on its own line:
PREDICTION: a single word, `correct` or `wrong`.
RECOMMENDATION: a recommendation (2-4 sentences) for the next concept or practice question, grounded in the history above.)TPL";

constexpr const char* kOutputFbRec =
    R"TPL(Respond with exactly the following labeled sections, each starting on its own line:
PREDICTION: a single word, `correct` or `wrong`.
FEEDBACK: personalized feedback (2-4 sentences) describing the student's recent performance, grounded in the history above.
RECOMMENDATION: a recommendation (2-4 sentences) for the next concept or practice question, grounded in the history above.)TPL";

constexpr const char* kFeedbackJudge =
    R"TPL(You are an expert educational assessment evaluator. Your task is to evaluate the quality of personalized feedback generated by a knowledge tracing system.

Context:
- Student History: {student_history}
- Prediction: {prediction}
- Ground Truth: {ground_truth}
- Generated Feedback: {generated_feedback}

Evaluation Task:
Evaluate the generated feedback using the rubric below. For each criterion, assign a score from 1 to 5 and provide a brief explanation.

Rubric:

1. Relevance (1-5):
Does the feedback directly address the student's learning history and current knowledge state?
1 = Completely irrelevant or generic
2 = Somewhat related but mostly generic
3 = Moderately relevant with limited personalization
4 = Highly relevant with clear personalization
5 = Perfectly tailored to the student's specific situation

2. Specificity (1-5):
Does the feedback provide concrete, actionable guidance?
1 = Extremely vague, no actionable guidance
2 = Mostly generic statements
3 = Some specific elements mixed with generic advice
4 = Mostly specific with clear guidance
5 = Highly specific with detailed, actionable steps

3. Accuracy (1-5):
Is the feedback consistent with the student's performance history and prediction outcome?
1 = Contradicts evidence
2 = Partially inconsistent
3 = Generally consistent with minor inaccuracies
4 = Accurate and consistent
5 = Perfectly aligned with all evidence

4. Constructiveness (1-5):
Does the feedback support learning improvement or reinforcement?
1 = No constructive value
2 = Minimal constructive guidance
3 = Some helpful elements
4 = Clear and constructive guidance
5 = Highly motivating and instructional feedback

5. Diagnostic Quality (1-5):
Does the feedback identify specific knowledge gaps or strengths based on KC patterns?
1 = No diagnostic insight
2 = Vague or incorrect diagnosis
3 = Basic diagnostic insight
4 = Clear identification of gaps or strengths
5 = Deep diagnostic insight with clear pedagogical implications

Output Format:
Return a JSON object with a score and explanation for each criterion.
)TPL";

constexpr const char* kRecommendationJudge =
    R"TPL(You are an expert educational assessment evaluator. Your task is to evaluate the quality of question recommendations generated by a knowledge tracing system.

Context:
- Student History: {student_history}
- Prediction: {prediction}
- Ground Truth: {ground_truth}
- Generated Recommendation: {generated_recommendation}

Evaluation Task:
Evaluate the generated recommendation using the rubric below. For each criterion, assign a score from 1 to 5 and provide a brief explanation.

Rubric:

1. Relevance (1-5):
Does the recommendation address the student's learning history and current knowledge state?
1 = Completely irrelevant
2 = Weakly related, mostly generic
3 = Moderately relevant
4 = Highly relevant and personalized
5 = Perfectly tailored to the student's knowledge gaps

2. Specificity (1-5):
Does the recommendation specify a concrete question and clear reasoning?
1 = No specific question or vague reasoning
2 = Question present but generic reasoning
3 = Question with some specific reasoning
4 = Specific question with clear reasoning
5 = Highly specific question with detailed pedagogical rationale

3. Accuracy (1-5):
Is the recommended question grounded in the student's interaction history and evidence?
1 = Question not in history or reasoning incorrect
2 = Question in history but reasoning partially incorrect
3 = Generally accurate with minor issues
4 = Accurate and consistent
5 = Perfectly aligned with all evidence

4. Constructiveness (1-5):
Does the recommendation support learning improvement or reinforcement?
1 = No constructive value
2 = Minimal learning value
3 = Some constructive elements
4 = Clear pedagogical benefit
5 = Strongly supports learning progress

5. Diagnostic Quality (1-5):
Does the recommendation reflect specific knowledge gaps or strengths based on KC patterns?
1 = No diagnostic basis
2 = Vague or incorrect diagnosis
3 = Basic diagnostic insight
4 = Clear identification of relevant gaps or strengths
5 = Deep diagnostic analysis linked to learning goals

Output Format:
Return a JSON object with a score and explanation for each criterion.
)TPL";

constexpr const char* kTraceLabel =
    R"TPL(You are an expert in analyzing mathematical problem-solving processes based on Schoenfeld's Episode Theory.

Given a segment of reasoning trace from a knowledge tracing model, classify it into one of the following categories:

1. Read: Identifying problem and student history. (e.g., "The problem asks to find the value of x when 2x+5=10.")

2. Plan: Formulating pedagogical strategies and subsequent steps. (e.g., "Next, I will differentiate both sides of the equation with respect to x.")

3. Implement: Executing calculations or logical operations. (e.g., "Substituting x=3 into the equation: 2(3)+5=6+5=11.")

4. Analyze: Evaluating theoretical relationships and mastery states. (e.g., "According to the Pythagorean theorem, in a right triangle, the square of the hypotenuse equals the sum of squares of the other two sides.")

5. Monitor: Regulating and calibrating the reasoning flow in real-time. (e.g., "Wait, something seems off here.")

6. Explore: Testing hypotheses through trial-and-error reasoning. (e.g., "Perhaps substituting different values for x might reveal a pattern.")

7. Verify: Confirming the consistency and correctness of results. (e.g., "Let me check my calculation again... Yes, it matches the previous result.")

Reasoning Trace Segment: {segment}

Output: Return only the label name (Read, Plan, Implement, Analyze, Monitor, Explore, or Verify).
)TPL";

std::string replace_all(std::string text, const std::string& needle,
                        const std::string& replacement) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), replacement);
    pos += replacement.size();
  }
  return text;
}

std::string bracket_list(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    out += items[i];
  }
  out += "]";
  return out;
}

std::string brace_set(const std::vector<std::string>& ids) {
  std::string out = "{";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    out += ids[i];
  }
  out += "}";
  return out;
}

const char* output_instruction(OutputMode mode) {
  switch (mode) {
    case OutputMode::PredOnly:
      return kOutputPredOnly;
    case OutputMode::FB:
      return kOutputFb;
    case OutputMode::Rec:
      return kOutputRec;
    case OutputMode::FBRec:
      return kOutputFbRec;
  }
  return kOutputPredOnly;
}

const char* prediction_template(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::NoOption:
      return kPredictionNoOption;
    case PromptVariant::Option:
      return kPredictionOption;
    case PromptVariant::Weight:
      return kPredictionWeight;
  }
  return kPredictionNoOption;
}

struct HistoryFields {
  std::string question_ids;
  std::string kc_ids;
  std::string option_sequence;
  std::string option_weights;
  std::string answer_sequence;
};

HistoryFields history_fields(const EvalInstance& instance, PromptVariant variant,
                             const OptionWeightTable* weights, double weight_portion) {
  HistoryFields fields;
  std::vector<std::string> qids;
  std::vector<std::string> kcs;
  std::vector<std::string> options;
  std::vector<std::string> weight_labels;
  std::vector<std::string> answers;

  const std::size_t len = instance.history.size();
  const std::size_t annotated = static_cast<std::size_t>(
      std::lround(weight_portion * static_cast<double>(len)));
  for (std::size_t i = 0; i < len; ++i) {
    const Interaction& item = instance.history[i];
    qids.push_back(item.question_id);
    kcs.push_back(brace_set(item.kc_ids));
    options.push_back(item.selected_option ? *item.selected_option : "NaN");
    answers.push_back(std::to_string(item.correct));
    if (variant == PromptVariant::Weight) {
      const bool in_portion = i + annotated >= len;
      std::optional<double> frequency;
      if (in_portion && item.selected_option && weights) {
        frequency = weights->lookup(item.question_id, *item.selected_option);
      }
      weight_labels.push_back(describe_weight(frequency).label);
    }
  }
  fields.question_ids = bracket_list(qids);
  fields.kc_ids = bracket_list(kcs);
  fields.option_sequence = bracket_list(options);
  fields.option_weights = bracket_list(weight_labels);
  fields.answer_sequence = bracket_list(answers);
  return fields;
}

}  // namespace

PromptVariant parse_variant(const std::string& name) {
  const std::string lowered = to_lower(trim(name));
  if (lowered == "nooption" || lowered == "no-option" || lowered == "no_option") {
    return PromptVariant::NoOption;
  }
  if (lowered == "option") {
    return PromptVariant::Option;
  }
  if (lowered == "weight") {
    return PromptVariant::Weight;
  }
  throw PromptError("unknown prompt variant: " + name);
}

std::string variant_name(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::NoOption:
      return "nooption";
    case PromptVariant::Option:
      return "option";
    case PromptVariant::Weight:
      return "weight";
  }
  return "unknown";
}

OutputMode parse_mode(const std::string& name) {
  const std::string lowered = to_lower(trim(name));
  if (lowered == "pred_only" || lowered == "predonly" || lowered == "pred-only") {
    return OutputMode::PredOnly;
  }
  if (lowered == "fb") {
    return OutputMode::FB;
  }
  if (lowered == "rec") {
    return OutputMode::Rec;
  }
  if (lowered == "fbrec" || lowered == "fb_rec" || lowered == "fb+rec") {
    return OutputMode::FBRec;
  }
  throw PromptError("unknown output mode: " + name);
}

std::string mode_name(OutputMode mode) {
  switch (mode) {
    case OutputMode::PredOnly:
      return "pred_only";
    case OutputMode::FB:
      return "fb";
    case OutputMode::Rec:
      return "rec";
    case OutputMode::FBRec:
      return "fbrec";
  }
  return "unknown";
}

WeightDescriptor describe_weight(std::optional<double> frequency) {
  if (!frequency) {
    return WeightDescriptor{"NaN", std::nullopt};
  }
  const double f = *frequency;
  if (f < 0.0 || f > 1.0) {
    throw PromptError("option frequency outside [0, 1]: " + std::to_string(f));
  }
  const char* label = "very high";
  if (f < 0.1) {
    label = "very low";
  } else if (f < 0.3) {
    label = "low";
  } else if (f < 0.5) {
    label = "medium";
  } else if (f < 0.8) {
    label = "high";
  }
  return WeightDescriptor{label, frequency};
}

std::string render_history_block(const EvalInstance& instance, PromptVariant variant,
                                 const OptionWeightTable* weights, double weight_portion) {
  const HistoryFields fields = history_fields(instance, variant, weights, weight_portion);
  std::string block = "1. Question ID sequence: " + fields.question_ids +
                      "\n2. KC ID sequence: " + fields.kc_ids;
  int line = 3;
  if (variant != PromptVariant::NoOption) {
    block += "\n" + std::to_string(line++) + ". Selected option sequence: " +
             fields.option_sequence;
  }
  if (variant == PromptVariant::Weight) {
    block += "\n" + std::to_string(line++) + ". Selected option weights: " +
             fields.option_weights;
  }
  block += "\n" + std::to_string(line) + ". Correctness sequence: " + fields.answer_sequence;
  return block;
}

RenderedPrompt render_prediction_prompt(const EvalInstance& instance, PromptVariant variant,
                                        OutputMode mode, const OptionWeightTable* weights,
                                        double weight_portion) {
  if (variant == PromptVariant::Weight && weights == nullptr) {
    throw PromptError("Weight variant requires an option weight table");
  }
  if (weight_portion < 0.0 || weight_portion > 1.0) {
    throw PromptError("weight portion must be in [0, 1]");
  }
  const HistoryFields fields = history_fields(instance, variant, weights, weight_portion);

  std::string text = prediction_template(variant);
  text = replace_all(text, "{question_ids}", fields.question_ids);
  text = replace_all(text, "{kc_ids}", fields.kc_ids);
  text = replace_all(text, "{option_sequence}", fields.option_sequence);
  text = replace_all(text, "{option_weights}", fields.option_weights);
  text = replace_all(text, "{answer_sequence}", fields.answer_sequence);
  text = replace_all(text, "{next_question_id}", instance.target.question_id);
  text = replace_all(text, "{next_kc_id}", brace_set(instance.target.kc_ids));
  text = replace_all(text, "{output_instruction}", output_instruction(mode));

  RenderedPrompt prompt;
  prompt.text = std::move(text);
  prompt.variant = variant;
  prompt.mode = mode;
  prompt.instance_id = instance.instance_id;
  return prompt;
}

RenderedPrompt render_feedback_judge_prompt(const JudgeSlots& slots) {
  if (trim(slots.generated_text).empty()) {
    throw PromptError("record has no feedback text to judge");
  }
  std::string text = kFeedbackJudge;
  text = replace_all(text, "{student_history}", slots.student_history);
  text = replace_all(text, "{prediction}", slots.prediction);
  text = replace_all(text, "{ground_truth}", slots.ground_truth);
  text = replace_all(text, "{generated_feedback}", slots.generated_text);
  RenderedPrompt prompt;
  prompt.text = std::move(text);
  prompt.instance_id = slots.instance_id;
  return prompt;
}

RenderedPrompt render_recommendation_judge_prompt(const JudgeSlots& slots) {
  if (trim(slots.generated_text).empty()) {
    throw PromptError("record has no recommendation text to judge");
  }
  std::string text = kRecommendationJudge;
  text = replace_all(text, "{student_history}", slots.student_history);
  text = replace_all(text, "{prediction}", slots.prediction);
  text = replace_all(text, "{ground_truth}", slots.ground_truth);
  text = replace_all(text, "{generated_recommendation}", slots.generated_text);
  RenderedPrompt prompt;
  prompt.text = std::move(text);
  prompt.instance_id = slots.instance_id;
  return prompt;
}

RenderedPrompt render_trace_label_prompt(const std::string& segment_text) {
  if (trim(segment_text).empty()) {
    throw PromptError("cannot label an empty trace segment");
  }
  std::string text = kTraceLabel;
  text = replace_all(text, "{segment}", segment_text);
  RenderedPrompt prompt;
  prompt.text = std::move(text);
  return prompt;
}

const std::map<std::string, std::string>& template_texts() {
  static const std::map<std::string, std::string> texts = {
      {"prediction_nooption.txt", kPredictionNoOption},
      {"prediction_option.txt", kPredictionOption},
      {"prediction_weight.txt", kPredictionWeight},
      {"output_pred_only.txt", kOutputPredOnly},
      {"output_fb.txt", kOutputFb},
      {"output_rec.txt", kOutputRec},
      {"output_fbrec.txt", kOutputFbRec},
      {"feedback_judge.txt", kFeedbackJudge},
      {"recommendation_judge.txt", kRecommendationJudge},
      {"trace_label.txt", kTraceLabel},
  };
  return texts;
}

}  // namespace kteval
