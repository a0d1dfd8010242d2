#include "kteval/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <exception>
#include <filesystem>
#include <mutex>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "kteval/util.hpp"

namespace kteval {
namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::string> alphabetic_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

struct SectionSpans {
  std::optional<std::string> prediction;
  std::optional<std::string> feedback;
  std::optional<std::string> recommendation;
};

// A section starts on a line of its own: optional whitespace / markdown
// emphasis, the section name, then a colon. Content runs to the next section.
SectionSpans scan_sections(const std::string& text) {
  static const char* names[] = {"PREDICTION", "FEEDBACK", "RECOMMENDATION"};
  SectionSpans spans;
  std::optional<int> open_section;
  std::string open_content;

  auto close_open = [&]() {
    if (!open_section) {
      return;
    }
    const std::string content = trim(open_content);
    std::optional<std::string>* slot =
        *open_section == 0   ? &spans.prediction
        : *open_section == 1 ? &spans.feedback
                             : &spans.recommendation;
    if (!content.empty() && !slot->has_value()) {
      *slot = content;
    }
    open_section.reset();
    open_content.clear();
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) {
      eol = text.size();
    }
    std::string line = text.substr(pos, eol - pos);

    std::size_t start = 0;
    while (start < line.size() &&
           (std::isspace(static_cast<unsigned char>(line[start])) || line[start] == '*' ||
            line[start] == '#')) {
      ++start;
    }
    bool started_section = false;
    for (int n = 0; n < 3; ++n) {
      const std::string_view name = names[n];
      if (line.compare(start, name.size(), name) == 0) {
        std::size_t after = start + name.size();
        while (after < line.size() && line[after] == '*') {
          ++after;
        }
        if (after < line.size() && line[after] == ':') {
          close_open();
          open_section = n;
          open_content = line.substr(after + 1);
          started_section = true;
          break;
        }
      }
    }
    if (!started_section && open_section) {
      open_content += '\n';
      open_content += line;
    }
    if (eol == text.size()) {
      break;
    }
    pos = eol + 1;
  }
  close_open();
  return spans;
}

std::string reason_suffix(InvalidReason reason) {
  switch (reason) {
    case InvalidReason::ParseFail:
      return "parse_fail";
    case InvalidReason::Truncated:
      return "truncated";
    case InvalidReason::TransportFailure:
      return "transport_error";
    case InvalidReason::None:
      break;
  }
  return "none";
}

ordered_json record_to_json(const PredictionRecord& record) {
  ordered_json doc;
  doc["instance_id"] = record.instance_id;
  doc["y"] = record.ground_truth;
  ordered_json outcomes = ordered_json::array();
  for (const SampleOutcome& outcome : record.outcomes) {
    outcomes.push_back(outcome_to_string(outcome));
  }
  doc["outcomes"] = std::move(outcomes);
  doc["empirical_p"] = record.empirical_p;
  doc["majority"] = record.majority_label == OutcomeKind::Correct ? "correct" : "wrong";
  doc["degenerate"] = record.degenerate;
  doc["tie_break"] = record.tie_break_applied;
  doc["feedback"] = record.feedback_text ? ordered_json(*record.feedback_text)
                                         : ordered_json(nullptr);
  doc["recommendation"] = record.recommendation_text
                              ? ordered_json(*record.recommendation_text)
                              : ordered_json(nullptr);
  doc["selected_sample"] = record.selected_sample_index;
  doc["prediction_word"] = record.prediction_word;
  doc["traces"] = record.traces;
  doc["history"] = record.history_text;
  doc["fingerprint"] = record.config_fingerprint;
  return doc;
}

PredictionRecord record_from_json(const ordered_json& doc) {
  PredictionRecord record;
  record.instance_id = doc.at("instance_id").get<std::string>();
  record.ground_truth = doc.at("y").get<int>();
  for (const auto& entry : doc.at("outcomes")) {
    record.outcomes.push_back(outcome_from_string(entry.get<std::string>()));
  }
  record.empirical_p = doc.at("empirical_p").get<double>();
  record.majority_label = doc.at("majority").get<std::string>() == "correct"
                              ? OutcomeKind::Correct
                              : OutcomeKind::Wrong;
  record.degenerate = doc.at("degenerate").get<bool>();
  record.tie_break_applied = doc.at("tie_break").get<bool>();
  if (!doc.at("feedback").is_null()) {
    record.feedback_text = doc.at("feedback").get<std::string>();
  }
  if (!doc.at("recommendation").is_null()) {
    record.recommendation_text = doc.at("recommendation").get<std::string>();
  }
  record.selected_sample_index = doc.at("selected_sample").get<int>();
  record.prediction_word = doc.at("prediction_word").get<std::string>();
  for (const auto& entry : doc.at("traces")) {
    record.traces.push_back(entry.get<std::string>());
  }
  record.history_text = doc.at("history").get<std::string>();
  record.config_fingerprint = doc.at("fingerprint").get<std::string>();
  return record;
}

ordered_json model_config_to_json(const ModelConfig& config) {
  ordered_json doc;
  doc["provider"] = provider_name(config.provider);
  doc["endpoint"] = config.endpoint;
  doc["model"] = config.model;
  doc["thinking_budget"] =
      config.thinking_budget ? ordered_json(*config.thinking_budget) : ordered_json(nullptr);
  doc["temperature"] = config.temperature;
  doc["max_answer_tokens"] = config.max_answer_tokens;
  doc["timeout_ms"] = config.timeout_ms;
  doc["max_parallel"] = config.max_parallel;
  doc["retry_attempts"] = config.retry.attempts;
  doc["retry_backoff_base_ms"] = config.retry.backoff_base_ms;
  doc["budget_field"] = config.budget_field;
  doc["api_key_env"] = config.api_key_env;
  doc["cache_dir"] = config.cache_dir;
  doc["mock_seed"] = config.mock_seed;
  doc["mock_trace_tokens"] = config.mock_trace_tokens
                                 ? ordered_json(*config.mock_trace_tokens)
                                 : ordered_json(nullptr);
  return doc;
}

}  // namespace

std::string outcome_to_string(const SampleOutcome& outcome) {
  switch (outcome.kind) {
    case OutcomeKind::Correct:
      return "correct";
    case OutcomeKind::Wrong:
      return "wrong";
    case OutcomeKind::Invalid:
      return "invalid:" + reason_suffix(outcome.reason);
  }
  return "invalid:none";
}

SampleOutcome outcome_from_string(const std::string& encoded) {
  if (encoded == "correct") {
    return {OutcomeKind::Correct, InvalidReason::None};
  }
  if (encoded == "wrong") {
    return {OutcomeKind::Wrong, InvalidReason::None};
  }
  if (encoded == "invalid:parse_fail") {
    return {OutcomeKind::Invalid, InvalidReason::ParseFail};
  }
  if (encoded == "invalid:truncated") {
    return {OutcomeKind::Invalid, InvalidReason::Truncated};
  }
  if (encoded == "invalid:transport_error") {
    return {OutcomeKind::Invalid, InvalidReason::TransportFailure};
  }
  throw ProtocolError("unrecognized outcome encoding: " + encoded);
}

SampleOutcome parse_single_word(const std::string& answer_text) {
  SampleOutcome outcome{OutcomeKind::Invalid, InvalidReason::ParseFail};
  for (const std::string& token : alphabetic_tokens(answer_text)) {
    if (token == "correct") {
      outcome = {OutcomeKind::Correct, InvalidReason::None};
    } else if (token == "wrong" || token == "incorrect") {
      outcome = {OutcomeKind::Wrong, InvalidReason::None};
    }
  }
  return outcome;
}

UnifiedParse parse_unified(const std::string& answer_text, OutputMode mode) {
  if (mode == OutputMode::PredOnly) {
    throw ProtocolError("unified parsing applies to sectioned output modes only");
  }
  const SectionSpans spans = scan_sections(answer_text);
  UnifiedParse parsed;
  parsed.outcome = spans.prediction ? parse_single_word(*spans.prediction)
                                    : parse_single_word(answer_text);
  parsed.feedback = spans.feedback;
  parsed.recommendation = spans.recommendation;
  return parsed;
}

Aggregate aggregate_outcomes(const std::vector<SampleOutcome>& outcomes) {
  int correct = 0;
  int wrong = 0;
  for (const SampleOutcome& outcome : outcomes) {
    if (outcome.kind == OutcomeKind::Correct) {
      ++correct;
    } else if (outcome.kind == OutcomeKind::Wrong) {
      ++wrong;
    }
  }
  Aggregate aggregate;
  const int valid = correct + wrong;
  if (valid == 0) {
    aggregate.empirical_p = 0.5;
    aggregate.majority_label = OutcomeKind::Correct;
    aggregate.degenerate = true;
    aggregate.tie_break_applied = true;
    return aggregate;
  }
  aggregate.empirical_p = static_cast<double>(correct) / static_cast<double>(valid);
  if (correct == wrong) {
    aggregate.majority_label = OutcomeKind::Correct;
    aggregate.tie_break_applied = true;
  } else {
    aggregate.majority_label =
        correct > wrong ? OutcomeKind::Correct : OutcomeKind::Wrong;
  }
  return aggregate;
}

std::string record_to_json_line(const PredictionRecord& record) {
  return record_to_json(record).dump();
}

PredictionRecord record_from_json_line(const std::string& line) {
  return record_from_json(ordered_json::parse(line));
}

std::string describe_fingerprint(const ModelConfig& model, PromptVariant variant,
                                 OutputMode mode, int samples, int history_length,
                                 const std::string& dataset_tag) {
  std::string material = provider_name(model.provider);
  material += '|' + model.model;
  material += '|' + model.endpoint;
  material += '|' + (model.thinking_budget ? std::to_string(*model.thinking_budget) : "none");
  material += '|' + std::to_string(model.temperature);
  material += '|' + std::to_string(model.mock_seed);
  material += '|' + variant_name(variant);
  material += '|' + mode_name(mode);
  material += '|' + std::to_string(samples);
  material += '|' + std::to_string(history_length);
  material += '|' + dataset_tag;
  material += '|';
  material += kTemplateVersion;
  return sha256_hex(material).substr(0, 16);
}

PredictionRecord run_instance(ModelGateway& gateway, const EvalInstance& instance,
                              PromptVariant variant, OutputMode mode, int samples,
                              const OptionWeightTable* weights, double weight_portion,
                              const std::string& fingerprint) {
  if (samples < 1) {
    throw ProtocolError("sample count must be >= 1");
  }
  const RenderedPrompt prompt =
      render_prediction_prompt(instance, variant, mode, weights, weight_portion);

  PredictionRecord record;
  record.instance_id = instance.instance_id;
  record.ground_truth = instance.target_correct;
  record.history_text = render_history_block(instance, variant, weights, weight_portion);
  record.config_fingerprint = fingerprint;
  record.outcomes.reserve(static_cast<std::size_t>(samples));
  record.traces.reserve(static_cast<std::size_t>(samples));

  for (int i = 0; i < samples; ++i) {
    SampleOutcome outcome{OutcomeKind::Invalid, InvalidReason::ParseFail};
    std::optional<std::string> feedback;
    std::optional<std::string> recommendation;
    std::string trace;
    try {
      const Completion completion = gateway.complete(prompt, i);
      trace = completion.reasoning_trace;
      if (completion.answer_text.empty() && completion.truncated) {
        outcome = {OutcomeKind::Invalid, InvalidReason::Truncated};
      } else if (mode == OutputMode::PredOnly) {
        outcome = parse_single_word(completion.answer_text);
      } else {
        UnifiedParse parsed = parse_unified(completion.answer_text, mode);
        outcome = parsed.outcome;
        feedback = std::move(parsed.feedback);
        recommendation = std::move(parsed.recommendation);
      }
    } catch (const TransportError&) {
      outcome = {OutcomeKind::Invalid, InvalidReason::TransportFailure};
    } catch (const GatewayError&) {
      outcome = {OutcomeKind::Invalid, InvalidReason::ParseFail};
    }

    if (outcome.valid() && record.selected_sample_index < 0) {
      record.selected_sample_index = i;
      record.prediction_word =
          outcome.kind == OutcomeKind::Correct ? "correct" : "wrong";
      if (mode == OutputMode::FB || mode == OutputMode::FBRec) {
        record.feedback_text = feedback;
      }
      if (mode == OutputMode::Rec || mode == OutputMode::FBRec) {
        record.recommendation_text = recommendation;
      }
    }
    record.outcomes.push_back(outcome);
    record.traces.push_back(std::move(trace));
  }

  const Aggregate aggregate = aggregate_outcomes(record.outcomes);
  record.empirical_p = aggregate.empirical_p;
  record.majority_label = aggregate.majority_label;
  record.degenerate = aggregate.degenerate;
  record.tie_break_applied = aggregate.tie_break_applied;
  return record;
}

std::vector<PredictionRecord> load_records(const std::string& records_path) {
  std::vector<PredictionRecord> records;
  for (const std::string& line : read_lines(records_path)) {
    if (!trim(line).empty()) {
      records.push_back(record_from_json_line(line));
    }
  }
  return records;
}

RunRecord run_suite(ModelGateway& gateway, const std::vector<EvalInstance>& instances,
                    const OptionWeightTable* weights, const SuiteOptions& options) {
  if (instances.empty()) {
    throw ProtocolError("cannot run an empty instance list");
  }
  {
    std::set<std::string> ids;
    for (const EvalInstance& instance : instances) {
      if (!ids.insert(instance.instance_id).second) {
        throw ProtocolError("duplicate instance id: " + instance.instance_id);
      }
    }
  }

  const std::string fingerprint =
      describe_fingerprint(gateway.config(), options.variant, options.mode,
                           options.samples, options.history_length, options.dataset_tag);

  RunRecord run;
  run.run_id = options.run_id.empty() ? "run-" + fingerprint.substr(0, 12) : options.run_id;
  run.dataset_tag = options.dataset_tag;
  run.variant = options.variant;
  run.mode = options.mode;
  run.history_length = options.history_length;
  run.samples_per_instance = options.samples;
  run.template_version = kTemplateVersion;
  run.model = gateway.config();

  const auto started = std::chrono::steady_clock::now();

  std::string records_path;
  std::unordered_map<std::string, PredictionRecord> persisted;
  if (!options.run_dir.empty()) {
    std::filesystem::create_directories(options.run_dir);
    records_path = (std::filesystem::path(options.run_dir) / "records.jsonl").string();
    if (std::filesystem::exists(records_path)) {
      if (options.resume) {
        for (PredictionRecord& record : load_records(records_path)) {
          const std::string id = record.instance_id;
          persisted.emplace(id, std::move(record));
        }
      } else {
        std::filesystem::remove(records_path);
      }
    }

    ordered_json manifest;
    manifest["run_id"] = run.run_id;
    manifest["dataset"] = run.dataset_tag;
    manifest["variant"] = variant_name(run.variant);
    manifest["mode"] = mode_name(run.mode);
    manifest["history_length"] = run.history_length;
    manifest["samples_per_instance"] = run.samples_per_instance;
    manifest["template_version"] = run.template_version;
    manifest["fingerprint"] = fingerprint;
    manifest["instances"] = instances.size();
    manifest["model"] = model_config_to_json(run.model);
    manifest["status"] = "running";
    write_file_atomic(
        (std::filesystem::path(options.run_dir) / "manifest.json").string(),
        manifest.dump(2) + "\n");
  }

  std::vector<const EvalInstance*> pending;
  for (const EvalInstance& instance : instances) {
    if (persisted.find(instance.instance_id) == persisted.end()) {
      pending.push_back(&instance);
    }
  }

  std::vector<PredictionRecord> fresh;
  fresh.reserve(pending.size());
  std::mutex sink_mutex;
  std::atomic<bool> aborted{false};
  std::exception_ptr first_error;
  std::size_t done = persisted.size();
  const std::size_t total = instances.size();
  const int threads = std::max(1, gateway.config().max_parallel);

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(pending.size()); ++i) {
    if (aborted.load()) {
      continue;
    }
    try {
      PredictionRecord record =
          run_instance(gateway, *pending[static_cast<std::size_t>(i)], options.variant,
                       options.mode, options.samples, weights, options.weight_portion,
                       fingerprint);
      std::lock_guard<std::mutex> lock(sink_mutex);
      if (!records_path.empty()) {
        append_line(records_path, record_to_json_line(record));
      }
      fresh.push_back(std::move(record));
      ++done;
      if (options.progress) {
        options.progress(done, total);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      if (!first_error) {
        first_error = std::current_exception();
      }
      aborted.store(true);
    }
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }

  run.records.reserve(total);
  for (auto& [id, record] : persisted) {
    run.records.push_back(std::move(record));
  }
  for (PredictionRecord& record : fresh) {
    run.records.push_back(std::move(record));
  }
  std::sort(run.records.begin(), run.records.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) {
              return a.instance_id < b.instance_id;
            });
  if (run.records.size() != total) {
    throw ProtocolError("record count mismatch after merge: " +
                        std::to_string(run.records.size()) + " vs " +
                        std::to_string(total));
  }

  for (const PredictionRecord& record : run.records) {
    run.counters.completions += record.outcomes.size();
    for (const SampleOutcome& outcome : record.outcomes) {
      if (outcome.kind == OutcomeKind::Invalid) {
        switch (outcome.reason) {
          case InvalidReason::TransportFailure:
            ++run.counters.transport_failures;
            break;
          case InvalidReason::Truncated:
            ++run.counters.truncated_samples;
            break;
          default:
            ++run.counters.parse_failures;
            break;
        }
      }
    }
  }
  run.counters.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();

  if (!options.run_dir.empty()) {
    // Canonical rewrite: one line per instance in id order, so an
    // interrupted-then-resumed run converges to the uninterrupted bytes.
    std::string canonical;
    for (const PredictionRecord& record : run.records) {
      canonical += record_to_json_line(record);
      canonical += '\n';
    }
    write_file_atomic(records_path, canonical);

    ordered_json manifest;
    manifest["run_id"] = run.run_id;
    manifest["dataset"] = run.dataset_tag;
    manifest["variant"] = variant_name(run.variant);
    manifest["mode"] = mode_name(run.mode);
    manifest["history_length"] = run.history_length;
    manifest["samples_per_instance"] = run.samples_per_instance;
    manifest["template_version"] = run.template_version;
    manifest["fingerprint"] = fingerprint;
    manifest["instances"] = instances.size();
    manifest["model"] = model_config_to_json(run.model);
    manifest["status"] = "complete";
    manifest["counters"] = ordered_json{{"completions", run.counters.completions},
                                        {"transport_failures", run.counters.transport_failures},
                                        {"parse_failures", run.counters.parse_failures},
                                        {"truncated_samples", run.counters.truncated_samples},
                                        {"wall_ms", run.counters.wall_ms}};
    write_file_atomic(
        (std::filesystem::path(options.run_dir) / "manifest.json").string(),
        manifest.dump(2) + "\n");
  }
  return run;
}

}  // namespace kteval
