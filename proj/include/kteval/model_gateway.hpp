#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "kteval/prompting.hpp"

namespace kteval {

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All retry attempts for one call failed at the HTTP layer.
class TransportError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

enum class Provider { HttpEndpoint, Mock };

Provider parse_provider(const std::string& name);
std::string provider_name(Provider provider);

struct RetryPolicy {
  int attempts = 3;
  int backoff_base_ms = 250;
};

struct ModelConfig {
  Provider provider = Provider::Mock;
  std::string endpoint;
  std::string model = "mock-model";
  std::optional<int> thinking_budget;
  double temperature = 1.0;
  int max_answer_tokens = 512;
  int timeout_ms = 60000;
  int max_parallel = 4;
  RetryPolicy retry;
  // Dotted JSON path for the reasoning-budget field; providers disagree on
  // the name, so it is config rather than code.
  std::string budget_field = "reasoning.max_tokens";
  // Name of the environment variable holding the API key. The key value
  // itself must never appear in logs, errors, or persisted artifacts.
  std::string api_key_env;
  std::string cache_dir;
  std::uint64_t mock_seed = 0;
  // Overrides the mock's hash-derived trace length; lets tests force the
  // over-budget truncation path.
  std::optional<int> mock_trace_tokens;

  void validate() const;
};

struct Completion {
  std::string reasoning_trace;
  std::string answer_text;
  int trace_token_count = 0;
  int answer_token_count = 0;
  std::int64_t latency_ms = 0;
  std::optional<std::int64_t> provider_reported_usage;
  bool truncated = false;
  bool from_cache = false;
};

// Whitespace-delimited word count; the documented approximation used
// whenever the provider reports no usage numbers.
int count_tokens(const std::string& text);

std::string cache_key(const ModelConfig& config, const RenderedPrompt& prompt,
                      int sample_index);

// Deterministic offline provider. Parses the correctness sequence back out
// of the prompt it is given and answers with probability tied to the recent
// history mean; also serves judge, section-formatted, and trace-label
// prompts so every downstream stage can run without a network.
Completion mock_complete(const RenderedPrompt& prompt, const ModelConfig& config,
                         int sample_index);

class ModelGateway {
 public:
  explicit ModelGateway(ModelConfig config);

  // One logical model call: cache lookup, provider call with retries,
  // budget enforcement, and the forced-answer continuation when the
  // reasoning channel exhausts the budget before an answer appears.
  Completion complete(const RenderedPrompt& prompt, int sample_index);

  const ModelConfig& config() const { return config_; }
  std::uint64_t requests_sent() const { return requests_sent_.load(); }
  std::uint64_t cache_hits() const { return cache_hits_.load(); }

 private:
  Completion call_provider(const RenderedPrompt& prompt, int sample_index);
  Completion http_complete(const RenderedPrompt& prompt, int sample_index);
  std::optional<Completion> cache_lookup(const std::string& key) const;
  void cache_store(const std::string& key, const Completion& completion) const;

  ModelConfig config_;
  std::atomic<std::uint64_t> requests_sent_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

}  // namespace kteval
