#include "kteval/model_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <thread>
#include <vector>

#include <json.hpp>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "kteval/util.hpp"

namespace kteval {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kMockVocab[] = {
    "the",    "student", "has",      "shown",   "a",        "steady",
    "grasp",  "of",      "this",     "concept", "across",   "recent",
    "items",  "so",      "mastery",  "appears", "to",       "be",
    "moving", "upward",  "while",    "errors",  "cluster",  "around",
    "newer",  "skills",  "and",      "review",  "suggests", "partial",
    "recall", "under",   "pressure", "which",   "matters",  "here"};
constexpr std::size_t kMockVocabSize = sizeof(kMockVocab) / sizeof(kMockVocab[0]);

constexpr const char* kMidMarkers[] = {"Analyze", "Implement", "Explore", "Plan",
                                       "Monitor"};

std::string filler_words(std::uint64_t h, int count) {
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (i > 0) {
      out += ' ';
    }
    out += kMockVocab[splitmix64(h + static_cast<std::uint64_t>(i)) % kMockVocabSize];
  }
  return out;
}

// One sentence per episode marker, padded with filler so the whole trace
// counts exactly total_tokens words and each sentence survives the
// segmenter's 10-token merge threshold.
std::string mock_trace(std::uint64_t h, int total_tokens) {
  const int n_sentences = std::clamp(total_tokens / 15, 3, 5);
  std::vector<std::string> markers;
  markers.push_back("Read");
  for (int i = 0; i < n_sentences - 2; ++i) {
    markers.push_back(kMidMarkers[(h + static_cast<std::uint64_t>(i)) % 5]);
  }
  markers.push_back("Verify");

  const int base = total_tokens / n_sentences;
  int remainder = total_tokens % n_sentences;
  std::string trace;
  for (int s = 0; s < n_sentences; ++s) {
    int share = base + (s < remainder ? 1 : 0);
    std::string sentence = "[" + markers[static_cast<std::size_t>(s)] + "]";
    if (share > 1) {
      sentence += ' ' + filler_words(mix_hash({h, static_cast<std::uint64_t>(s)}),
                                     share - 1);
    }
    sentence += '.';
    if (s > 0) {
      trace += ' ';
    }
    trace += sentence;
  }
  return trace;
}

std::optional<std::string> line_value(const std::string& text, const std::string& label) {
  const std::size_t pos = text.find(label);
  if (pos == std::string::npos) {
    return std::nullopt;
  }
  const std::size_t start = pos + label.size();
  std::size_t end = text.find('\n', start);
  if (end == std::string::npos) {
    end = text.size();
  }
  return trim(text.substr(start, end - start));
}

std::optional<std::string> bracket_list_after(const std::string& text,
                                              const std::string& label) {
  const std::size_t pos = text.find(label);
  if (pos == std::string::npos) {
    return std::nullopt;
  }
  const std::size_t open = text.find('[', pos);
  if (open == std::string::npos) {
    return std::nullopt;
  }
  const std::size_t close = text.find(']', open);
  if (close == std::string::npos) {
    return std::nullopt;
  }
  return text.substr(open + 1, close - open - 1);
}

struct ParsedHistory {
  std::vector<int> answers;
  std::string next_question_id;
};

ParsedHistory parse_prompt_history(const std::string& text) {
  ParsedHistory parsed;
  const auto answers = bracket_list_after(text, "Correctness sequence:");
  if (!answers) {
    throw GatewayError("mock provider could not find a correctness sequence in the prompt");
  }
  for (const std::string& piece : split(*answers, ',')) {
    const std::string value = trim(piece);
    if (value == "1") {
      parsed.answers.push_back(1);
    } else if (value == "0") {
      parsed.answers.push_back(0);
    } else if (!value.empty()) {
      throw GatewayError("mock provider saw a non-binary correctness entry: " + value);
    }
  }
  if (parsed.answers.empty()) {
    throw GatewayError("mock provider saw an empty correctness sequence");
  }
  parsed.next_question_id = line_value(text, "Next question ID: ").value_or("?");
  return parsed;
}

std::string surface_form(const std::string& word, std::uint64_t h) {
  switch (h % 4) {
    case 0:
      return word;
    case 1: {
      std::string capped = word;
      capped[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(capped[0])));
      return capped;
    }
    case 2:
      return word + ".";
    default:
      return "The answer is " + word + ".";
  }
}

std::string mock_judge_reply(const std::string& prompt_text, std::uint64_t seed) {
  static const char* dims[] = {"relevance", "specificity", "accuracy",
                               "constructiveness", "diagnostic_quality"};
  ordered_json scores;
  const std::uint64_t h = mix_hash({seed, fnv1a64(prompt_text)});
  for (const char* dim : dims) {
    const int score = 1 + static_cast<int>(mix_hash({h, fnv1a64(dim)}) % 5);
    ordered_json entry;
    entry["score"] = score;
    entry["explanation"] = std::string("Deterministic rubric note for ") + dim + ".";
    scores[dim] = entry;
  }
  // Prose around the document on purpose: consumers must extract the first
  // balanced braced object rather than parse the whole reply.
  return "Here is my evaluation.\n" + scores.dump(2) + "\nEnd of evaluation.";
}

std::string mock_trace_label_reply(const std::string& prompt_text, std::uint64_t h) {
  static const char* labels[] = {"Read",    "Plan",    "Implement", "Analyze",
                                 "Monitor", "Explore", "Verify"};
  std::string segment = prompt_text;
  const std::size_t seg_pos = prompt_text.find("Reasoning Trace Segment: ");
  if (seg_pos != std::string::npos) {
    const std::size_t start = seg_pos + std::string("Reasoning Trace Segment: ").size();
    const std::size_t end = prompt_text.find("\n\nOutput:", start);
    segment = prompt_text.substr(start, end == std::string::npos ? std::string::npos
                                                                 : end - start);
  }
  const std::string lowered = to_lower(segment);
  for (const char* label : labels) {
    if (lowered.find("[" + to_lower(label) + "]") != std::string::npos) {
      // Vary the casing; the consumer matches case-insensitively.
      return h % 3 == 0 ? to_lower(label) : std::string(label);
    }
  }
  return "Unknown";
}

void set_dotted_field(ordered_json& body, const std::string& path, int value) {
  ordered_json* node = &body;
  const std::vector<std::string> parts = split(path, '.');
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &((*node)[parts[i]]);
  }
  (*node)[parts.back()] = value;
}

std::string extract_reasoning(const ordered_json& message, const ordered_json& choice) {
  if (message.contains("reasoning_content") && message["reasoning_content"].is_string()) {
    return message["reasoning_content"].get<std::string>();
  }
  if (message.contains("reasoning")) {
    const auto& r = message["reasoning"];
    if (r.is_string()) {
      return r.get<std::string>();
    }
    if (r.is_object() && r.contains("content") && r["content"].is_string()) {
      return r["content"].get<std::string>();
    }
  }
  if (choice.contains("reasoning") && choice["reasoning"].is_string()) {
    return choice["reasoning"].get<std::string>();
  }
  return "";
}

ordered_json completion_to_json(const Completion& completion) {
  ordered_json doc;
  doc["reasoning_trace"] = completion.reasoning_trace;
  doc["answer_text"] = completion.answer_text;
  doc["trace_token_count"] = completion.trace_token_count;
  doc["answer_token_count"] = completion.answer_token_count;
  if (completion.provider_reported_usage) {
    doc["provider_reported_usage"] = *completion.provider_reported_usage;
  } else {
    doc["provider_reported_usage"] = nullptr;
  }
  doc["truncated"] = completion.truncated;
  return doc;
}

Completion completion_from_json(const ordered_json& doc) {
  Completion completion;
  completion.reasoning_trace = doc.at("reasoning_trace").get<std::string>();
  completion.answer_text = doc.at("answer_text").get<std::string>();
  completion.trace_token_count = doc.at("trace_token_count").get<int>();
  completion.answer_token_count = doc.at("answer_token_count").get<int>();
  if (!doc.at("provider_reported_usage").is_null()) {
    completion.provider_reported_usage = doc.at("provider_reported_usage").get<std::int64_t>();
  }
  completion.truncated = doc.at("truncated").get<bool>();
  return completion;
}

}  // namespace

Provider parse_provider(const std::string& name) {
  const std::string lowered = to_lower(trim(name));
  if (lowered == "mock") {
    return Provider::Mock;
  }
  if (lowered == "http" || lowered == "http_endpoint") {
    return Provider::HttpEndpoint;
  }
  throw GatewayError("unknown provider: " + name);
}

std::string provider_name(Provider provider) {
  return provider == Provider::Mock ? "mock" : "http_endpoint";
}

void ModelConfig::validate() const {
  if (thinking_budget && *thinking_budget < 0) {
    throw GatewayError("thinking budget must be >= 0");
  }
  if (temperature < 0.0) {
    throw GatewayError("temperature must be >= 0");
  }
  if (max_parallel < 1) {
    throw GatewayError("max_parallel must be >= 1");
  }
  if (retry.attempts < 1) {
    throw GatewayError("retry attempts must be >= 1");
  }
  if (provider == Provider::HttpEndpoint && endpoint.empty()) {
    throw GatewayError("http provider requires an endpoint URL");
  }
}

int count_tokens(const std::string& text) {
  return static_cast<int>(approx_token_count(text));
}

std::string cache_key(const ModelConfig& config, const RenderedPrompt& prompt,
                      int sample_index) {
  std::string material = config.model;
  material += '\x1f';
  material += prompt.template_version;
  material += '\x1f';
  material += prompt.text;
  material += '\x1f';
  material += std::to_string(config.temperature);
  material += '\x1f';
  material += config.thinking_budget ? std::to_string(*config.thinking_budget) : "none";
  material += '\x1f';
  material += std::to_string(sample_index);
  return sha256_hex(material);
}

Completion mock_complete(const RenderedPrompt& prompt, const ModelConfig& config,
                         int sample_index) {
  const std::string& text = prompt.text;
  Completion completion;

  if (text.find("Reasoning Trace Segment:") != std::string::npos) {
    const std::uint64_t h = mix_hash({config.mock_seed, fnv1a64(text),
                                      static_cast<std::uint64_t>(sample_index)});
    completion.answer_text = mock_trace_label_reply(text, h);
  } else if (text.find("Return a JSON object") != std::string::npos) {
    completion.answer_text = mock_judge_reply(text, config.mock_seed);
  } else {
    const ParsedHistory parsed = parse_prompt_history(text);
    const std::size_t recent =
        std::min<std::size_t>(parsed.answers.size(), 5);
    double sum = 0.0;
    for (std::size_t i = parsed.answers.size() - recent; i < parsed.answers.size(); ++i) {
      sum += parsed.answers[i];
    }
    const double p_hat =
        std::clamp(sum / static_cast<double>(recent), 0.05, 0.95);

    const std::string identity =
        prompt.instance_id.empty() ? text : prompt.instance_id;
    const std::uint64_t h = mix_hash({config.mock_seed, fnv1a64(identity),
                                      static_cast<std::uint64_t>(sample_index)});
    const bool says_correct = unit_interval(splitmix64(h)) < p_hat;
    const std::string word = says_correct ? "correct" : "wrong";

    const bool sectioned = text.find("PREDICTION: a single word") != std::string::npos;
    if (!sectioned) {
      completion.answer_text = surface_form(word, splitmix64(h ^ 0x9e3779b97f4a7c15ULL));
    } else {
      std::string body = "PREDICTION: " + word;
      const int shown = static_cast<int>(sum);
      if (text.find("FEEDBACK: personalized feedback") != std::string::npos) {
        body += "\nFEEDBACK: You answered " + std::to_string(shown) + " of your last " +
                std::to_string(recent) +
                " questions correctly. Keep reviewing the knowledge components that "
                "appear in your recent misses before moving on.";
      }
      if (text.find("RECOMMENDATION: a recommendation") != std::string::npos) {
        body += "\nRECOMMENDATION: Attempt question " + parsed.next_question_id +
                " next, then revisit one earlier question you missed to reinforce "
                "the same knowledge component.";
      }
      completion.answer_text = body;
    }

    if (config.thinking_budget) {
      const int budget = *config.thinking_budget;
      const int wanted = config.mock_trace_tokens
                             ? *config.mock_trace_tokens
                             : 30 + static_cast<int>(splitmix64(h + 1) % 90);
      const std::string full_trace = mock_trace(splitmix64(h + 2), wanted);
      if (wanted > budget) {
        // Budget exhausted before the answer channel opened: emit the
        // clipped trace and nothing else, as a capped endpoint would.
        completion.reasoning_trace = truncate_tokens(full_trace, budget);
        completion.answer_text.clear();
      } else {
        completion.reasoning_trace = full_trace;
      }
    }
  }

  completion.trace_token_count = count_tokens(completion.reasoning_trace);
  completion.answer_token_count = count_tokens(completion.answer_text);
  return completion;
}

ModelGateway::ModelGateway(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.cache_dir.empty()) {
    std::filesystem::create_directories(config_.cache_dir);
  }
}

std::optional<Completion> ModelGateway::cache_lookup(const std::string& key) const {
  if (config_.cache_dir.empty()) {
    return std::nullopt;
  }
  const std::filesystem::path path =
      std::filesystem::path(config_.cache_dir) / (key + ".json");
  if (!std::filesystem::exists(path)) {
    return std::nullopt;
  }
  try {
    const ordered_json doc = ordered_json::parse(read_file(path.string()));
    return completion_from_json(doc.at("completion"));
  } catch (const std::exception&) {
    // Unreadable entries are treated as misses and rewritten.
    return std::nullopt;
  }
}

void ModelGateway::cache_store(const std::string& key, const Completion& completion) const {
  if (config_.cache_dir.empty()) {
    return;
  }
  ordered_json doc;
  doc["key"] = key;
  doc["model"] = config_.model;
  doc["completion"] = completion_to_json(completion);
  const std::filesystem::path path =
      std::filesystem::path(config_.cache_dir) / (key + ".json");
  write_file_atomic(path.string(), doc.dump(2) + "\n");
}

Completion ModelGateway::http_complete(const RenderedPrompt& prompt, int sample_index) {
  ordered_json body;
  body["model"] = config_.model;
  body["messages"] = ordered_json::array({ordered_json{{"role", "user"},
                                                       {"content", prompt.text}}});
  body["temperature"] = config_.temperature;
  body["max_tokens"] = config_.max_answer_tokens;
  if (config_.thinking_budget) {
    set_dotted_field(body, config_.budget_field, *config_.thinking_budget);
  }
  // Distinct samples must not collapse into one upstream cache entry.
  body["seed"] = sample_index;

  std::string scheme_host;
  std::string request_path = "/";
  const std::size_t scheme_end = config_.endpoint.find("://");
  const std::size_t path_start =
      config_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host = config_.endpoint;
  } else {
    scheme_host = config_.endpoint.substr(0, path_start);
    request_path = config_.endpoint.substr(path_start);
  }

  httplib::Client client(scheme_host);
  client.set_connection_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
  client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  std::string last_error;
  const std::string payload = body.dump();
  for (int attempt = 0; attempt < config_.retry.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(
          static_cast<std::int64_t>(config_.retry.backoff_base_ms) * (1LL << (attempt - 1))));
    }
    requests_sent_.fetch_add(1);
    httplib::Result result = client.Post(request_path, headers, payload, "application/json");
    if (!result) {
      last_error = "connection failure (" + httplib::to_string(result.error()) + ")";
      continue;
    }
    if (result->status < 200 || result->status >= 300) {
      last_error = "HTTP status " + std::to_string(result->status);
      continue;
    }
    ordered_json doc;
    try {
      doc = ordered_json::parse(result->body);
    } catch (const std::exception& e) {
      throw GatewayError(std::string("malformed response body: ") + e.what());
    }
    try {
      const auto& choice = doc.at("choices").at(0);
      const auto& message = choice.at("message");
      Completion completion;
      if (message.contains("content") && message["content"].is_string()) {
        completion.answer_text = message["content"].get<std::string>();
      }
      completion.reasoning_trace = extract_reasoning(message, choice);
      if (doc.contains("usage") && doc["usage"].contains("completion_tokens")) {
        completion.provider_reported_usage =
            doc["usage"]["completion_tokens"].get<std::int64_t>();
      }
      return completion;
    } catch (const ordered_json::exception& e) {
      throw GatewayError(std::string("response missing expected fields: ") + e.what());
    }
  }
  throw TransportError("request to " + config_.endpoint + " failed after " +
                       std::to_string(config_.retry.attempts) + " attempts: " + last_error);
}

Completion ModelGateway::call_provider(const RenderedPrompt& prompt, int sample_index) {
  if (config_.provider == Provider::Mock) {
    requests_sent_.fetch_add(1);
    return mock_complete(prompt, config_, sample_index);
  }
  return http_complete(prompt, sample_index);
}

Completion ModelGateway::complete(const RenderedPrompt& prompt, int sample_index) {
  const std::string key = cache_key(config_, prompt, sample_index);
  if (auto cached = cache_lookup(key)) {
    cache_hits_.fetch_add(1);
    cached->from_cache = true;
    return *cached;
  }

  const auto started = std::chrono::steady_clock::now();
  Completion completion = call_provider(prompt, sample_index);

  if (config_.thinking_budget) {
    const int budget = *config_.thinking_budget;
    if (count_tokens(completion.reasoning_trace) > budget) {
      completion.reasoning_trace = truncate_tokens(completion.reasoning_trace, budget);
      completion.truncated = true;
    }
    if (completion.answer_text.empty() && !completion.reasoning_trace.empty()) {
      // The reasoning channel consumed the whole budget. Ask once more with
      // reasoning disabled to force a final answer; the clipped trace is kept.
      completion.truncated = true;
      ModelConfig no_think = config_;
      no_think.thinking_budget.reset();
      if (config_.provider == Provider::Mock) {
        requests_sent_.fetch_add(1);
        Completion forced = mock_complete(prompt, no_think, sample_index);
        completion.answer_text = forced.answer_text;
      } else {
        ModelGateway forced_gateway(no_think);
        Completion forced = forced_gateway.http_complete(prompt, sample_index);
        requests_sent_.fetch_add(forced_gateway.requests_sent());
        completion.answer_text = forced.answer_text;
      }
    }
  }

  completion.trace_token_count = count_tokens(completion.reasoning_trace);
  completion.answer_token_count = count_tokens(completion.answer_text);
  completion.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - started)
                              .count();
  cache_store(key, completion);
  return completion;
}

}  // namespace kteval
