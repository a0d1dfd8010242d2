#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "kteval/model_gateway.hpp"
#include "kteval/protocol.hpp"
#include "kteval/util.hpp"
#include "test_support.hpp"

using kteval::InvalidReason;
using kteval::OutcomeKind;
using kteval::OutputMode;
using kteval::PromptVariant;
using kteval::SampleOutcome;

namespace {

kteval::ModelConfig mock_config(std::uint64_t seed, std::optional<int> budget) {
  kteval::ModelConfig config;
  config.provider = kteval::Provider::Mock;
  config.mock_seed = seed;
  config.thinking_budget = budget;
  config.max_parallel = 4;
  return config;
}

std::vector<kteval::EvalInstance> synth_instances(std::size_t learners, std::size_t length,
                                                  std::uint64_t seed, std::size_t history) {
  return kteval::build_instances(ktest::synth_sequences(learners, length, seed), history);
}

}  // namespace

TEST_CASE("single-word parsing keys on standalone tokens") {
  struct Case {
    const char* text;
    OutcomeKind kind;
  };
  const Case cases[] = {
      {"correct", OutcomeKind::Correct},
      {"Correct.", OutcomeKind::Correct},
      {"  CORRECT\n", OutcomeKind::Correct},
      {"The answer is correct.", OutcomeKind::Correct},
      {"wrong", OutcomeKind::Wrong},
      {"Wrong!", OutcomeKind::Wrong},
      {"incorrect", OutcomeKind::Wrong},
      {"I believe the student answers incorrect.", OutcomeKind::Wrong},
      // The last standalone verdict wins.
      {"correct at first glance, but ultimately wrong", OutcomeKind::Wrong},
      {"wrong reasoning, yet the final answer is correct", OutcomeKind::Correct},
      // Substring matches decide nothing.
      {"they answered incorrectly", OutcomeKind::Invalid},
      {"correctness is hard to judge", OutcomeKind::Invalid},
      {"", OutcomeKind::Invalid},
      {"maybe", OutcomeKind::Invalid},
      {"012345 !!", OutcomeKind::Invalid},
  };
  for (const Case& c : cases) {
    CAPTURE(c.text);
    const SampleOutcome outcome = kteval::parse_single_word(c.text);
    CHECK(outcome.kind == c.kind);
    if (c.kind == OutcomeKind::Invalid) {
      CHECK(outcome.reason == InvalidReason::ParseFail);
    }
  }
}

TEST_CASE("unified parsing finds sections in any order") {
  const std::string in_order =
      "PREDICTION: correct\n"
      "FEEDBACK: You are improving steadily.\n"
      "RECOMMENDATION: Review fractions next.\n";
  const std::string shuffled =
      "RECOMMENDATION: Review fractions next.\n"
      "PREDICTION: correct\n"
      "FEEDBACK: You are improving steadily.\n";
  for (const std::string& text : {in_order, shuffled}) {
    const auto parsed = kteval::parse_unified(text, OutputMode::FBRec);
    CHECK(parsed.outcome.kind == OutcomeKind::Correct);
    REQUIRE(parsed.feedback.has_value());
    CHECK(*parsed.feedback == "You are improving steadily.");
    REQUIRE(parsed.recommendation.has_value());
    CHECK(*parsed.recommendation == "Review fractions next.");
  }
}

TEST_CASE("unified parsing tolerates markdown decorations and multi-line sections") {
  const std::string text =
      "Here is my assessment.\n"
      "**PREDICTION:** wrong\n"
      "## FEEDBACK: The last two answers\n"
      "show a gap in subtraction.\n"
      "RECOMMENDATION: Practice borrowing.\n";
  const auto parsed = kteval::parse_unified(text, OutputMode::FBRec);
  CHECK(parsed.outcome.kind == OutcomeKind::Wrong);
  REQUIRE(parsed.feedback.has_value());
  CHECK(*parsed.feedback == "The last two answers\nshow a gap in subtraction.");
  REQUIRE(parsed.recommendation.has_value());
  CHECK(*parsed.recommendation == "Practice borrowing.");
}

TEST_CASE("unified parsing falls back to a whole-text verdict scan") {
  const auto parsed = kteval::parse_unified("I think they get it wrong.", OutputMode::FB);
  CHECK(parsed.outcome.kind == OutcomeKind::Wrong);
  CHECK_FALSE(parsed.feedback.has_value());

  // Missing verdict entirely: invalid, no section content invented.
  const auto empty = kteval::parse_unified("no verdict here", OutputMode::FB);
  CHECK(empty.outcome.kind == OutcomeKind::Invalid);
  CHECK_FALSE(empty.feedback.has_value());
}

TEST_CASE("unified parsing keeps the first occurrence of a repeated section") {
  const std::string text =
      "PREDICTION: correct\n"
      "FEEDBACK: first feedback.\n"
      "FEEDBACK: second feedback.\n";
  const auto parsed = kteval::parse_unified(text, OutputMode::FB);
  REQUIRE(parsed.feedback.has_value());
  CHECK(*parsed.feedback == "first feedback.");
}

TEST_CASE("unified parsing rejects the prediction-only mode") {
  CHECK_THROWS_AS((void)kteval::parse_unified("correct", OutputMode::PredOnly),
                  kteval::ProtocolError);
}

TEST_CASE("aggregation counts valid samples only") {
  const SampleOutcome correct{OutcomeKind::Correct, InvalidReason::None};
  const SampleOutcome wrong{OutcomeKind::Wrong, InvalidReason::None};
  const SampleOutcome invalid{OutcomeKind::Invalid, InvalidReason::ParseFail};

  SUBCASE("plain majority") {
    const auto agg = kteval::aggregate_outcomes(
        {correct, correct, correct, wrong, invalid, correct, wrong, correct,
         correct, correct});
    CHECK(agg.empirical_p == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
    CHECK(agg.majority_label == OutcomeKind::Correct);
    CHECK_FALSE(agg.degenerate);
    CHECK_FALSE(agg.tie_break_applied);
  }
  SUBCASE("exact tie resolves to Correct and is flagged") {
    const auto agg = kteval::aggregate_outcomes({correct, wrong, correct, wrong});
    CHECK(agg.empirical_p == 0.5);
    CHECK(agg.majority_label == OutcomeKind::Correct);
    CHECK(agg.tie_break_applied);
    CHECK_FALSE(agg.degenerate);
  }
  SUBCASE("all invalid degenerates to p=0.5") {
    const auto agg = kteval::aggregate_outcomes({invalid, invalid, invalid});
    CHECK(agg.empirical_p == 0.5);
    CHECK(agg.majority_label == OutcomeKind::Correct);
    CHECK(agg.degenerate);
    CHECK(agg.tie_break_applied);
  }
  SUBCASE("empty input degenerates too") {
    const auto agg = kteval::aggregate_outcomes({});
    CHECK(agg.degenerate);
  }
}

TEST_CASE("outcome encoding round-trips, unknown strings rejected") {
  const SampleOutcome outcomes[] = {
      {OutcomeKind::Correct, InvalidReason::None},
      {OutcomeKind::Wrong, InvalidReason::None},
      {OutcomeKind::Invalid, InvalidReason::ParseFail},
      {OutcomeKind::Invalid, InvalidReason::Truncated},
      {OutcomeKind::Invalid, InvalidReason::TransportFailure},
  };
  for (const SampleOutcome& outcome : outcomes) {
    CHECK(kteval::outcome_from_string(kteval::outcome_to_string(outcome)) == outcome);
  }
  CHECK_THROWS_AS((void)kteval::outcome_from_string("perhaps"), kteval::ProtocolError);
}

TEST_CASE("prediction records round-trip through the JSONL encoding") {
  kteval::PredictionRecord record;
  record.instance_id = "stu9:4";
  record.ground_truth = 1;
  record.outcomes = {{OutcomeKind::Correct, InvalidReason::None},
                     {OutcomeKind::Invalid, InvalidReason::Truncated}};
  record.empirical_p = 1.0;
  record.majority_label = OutcomeKind::Correct;
  record.feedback_text = "Keep practicing.";
  record.selected_sample_index = 0;
  record.prediction_word = "correct";
  record.traces = {"[Read] a b.", ""};
  record.history_text = "1. Question ID sequence: [1, 2]";
  record.config_fingerprint = "abcd";

  const std::string line = kteval::record_to_json_line(record);
  CHECK(line.find('\n') == std::string::npos);
  const auto parsed = kteval::record_from_json_line(line);
  CHECK(parsed.instance_id == record.instance_id);
  CHECK(parsed.ground_truth == record.ground_truth);
  CHECK(parsed.outcomes == record.outcomes);
  CHECK(parsed.empirical_p == record.empirical_p);
  CHECK(parsed.feedback_text == record.feedback_text);
  CHECK_FALSE(parsed.recommendation_text.has_value());
  CHECK(parsed.selected_sample_index == 0);
  CHECK(parsed.prediction_word == "correct");
  CHECK(parsed.traces == record.traces);
  CHECK(parsed.history_text == record.history_text);
  // Re-encoding is byte-stable.
  CHECK(kteval::record_to_json_line(parsed) == line);
}

TEST_CASE("fingerprints react to every knob") {
  const auto config = mock_config(42, 2048);
  const std::string base = kteval::describe_fingerprint(config, PromptVariant::Option,
                                                        OutputMode::FB, 10, 25, "assist09");
  CHECK(base.size() == 16);
  CHECK(base == kteval::describe_fingerprint(config, PromptVariant::Option, OutputMode::FB,
                                             10, 25, "assist09"));
  CHECK(base != kteval::describe_fingerprint(config, PromptVariant::Weight, OutputMode::FB,
                                             10, 25, "assist09"));
  CHECK(base != kteval::describe_fingerprint(config, PromptVariant::Option, OutputMode::Rec,
                                             10, 25, "assist09"));
  auto no_think = config;
  no_think.thinking_budget.reset();
  CHECK(base != kteval::describe_fingerprint(no_think, PromptVariant::Option, OutputMode::FB,
                                             10, 25, "assist09"));
}

TEST_CASE("run_instance fills every per-sample field deterministically") {
  const auto instances = synth_instances(2, 8, 7, 5);
  REQUIRE(!instances.empty());
  const auto& instance = instances.front();

  kteval::ModelGateway gateway(mock_config(42, 2048));
  const auto record = kteval::run_instance(gateway, instance, PromptVariant::NoOption,
                                           OutputMode::FBRec, 10, nullptr, 1.0, "fp");
  CHECK(record.instance_id == instance.instance_id);
  CHECK(record.outcomes.size() == 10);
  CHECK(record.traces.size() == 10);
  for (const std::string& trace : record.traces) {
    CHECK(!trace.empty());  // thinking budget set, so every sample carries a trace
  }
  CHECK(record.selected_sample_index >= 0);
  CHECK((record.prediction_word == "correct" || record.prediction_word == "wrong"));
  REQUIRE(record.feedback_text.has_value());
  REQUIRE(record.recommendation_text.has_value());
  CHECK(!record.history_text.empty());

  kteval::ModelGateway again(mock_config(42, 2048));
  const auto repeat = kteval::run_instance(again, instance, PromptVariant::NoOption,
                                           OutputMode::FBRec, 10, nullptr, 1.0, "fp");
  CHECK(kteval::record_to_json_line(repeat) == kteval::record_to_json_line(record));
}

TEST_CASE("run_instance in prediction-only mode keeps no section text") {
  const auto instances = synth_instances(1, 6, 11, 5);
  REQUIRE(!instances.empty());
  kteval::ModelGateway gateway(mock_config(5, std::nullopt));
  const auto record = kteval::run_instance(gateway, instances.front(),
                                           PromptVariant::NoOption, OutputMode::PredOnly,
                                           4, nullptr, 1.0, "fp");
  CHECK(record.outcomes.size() == 4);
  CHECK_FALSE(record.feedback_text.has_value());
  CHECK_FALSE(record.recommendation_text.has_value());
  for (const std::string& trace : record.traces) {
    CHECK(trace.empty());  // no-think mode produces no traces
  }
}

TEST_CASE("run_suite is deterministic, resumable, and canonically ordered") {
  const auto instances = synth_instances(4, 7, 23, 5);
  REQUIRE(instances.size() == 24);

  kteval::SuiteOptions options;
  options.variant = PromptVariant::NoOption;
  options.mode = OutputMode::FBRec;
  options.samples = 3;
  options.history_length = 5;
  options.dataset_tag = "synthetic";
  options.run_id = "suite-test";

  const auto dir_a = ktest::fresh_scratch("suite-a");
  const auto dir_b = ktest::fresh_scratch("suite-b");
  const auto dir_c = ktest::fresh_scratch("suite-c");

  options.run_dir = dir_a.string();
  kteval::ModelGateway gateway_a(mock_config(42, 1024));
  const auto run_a = kteval::run_suite(gateway_a, instances, nullptr, options);
  CHECK(run_a.records.size() == instances.size());
  CHECK(run_a.counters.completions == instances.size() * 3);
  CHECK(std::is_sorted(run_a.records.begin(), run_a.records.end(),
                       [](const auto& x, const auto& y) {
                         return x.instance_id < y.instance_id;
                       }));

  options.run_dir = dir_b.string();
  kteval::ModelGateway gateway_b(mock_config(42, 1024));
  (void)kteval::run_suite(gateway_b, instances, nullptr, options);

  const std::string bytes_a = kteval::read_file((dir_a / "records.jsonl").string());
  const std::string bytes_b = kteval::read_file((dir_b / "records.jsonl").string());
  CHECK(bytes_a == bytes_b);
  CHECK(!bytes_a.empty());

  // Simulated crash: the progress hook throws once eight records are on disk.
  options.run_dir = dir_c.string();
  options.progress = [](std::size_t done, std::size_t) {
    if (done >= 8) {
      throw std::runtime_error("injected crash");
    }
  };
  kteval::ModelGateway gateway_c(mock_config(42, 1024));
  CHECK_THROWS_WITH_AS((void)kteval::run_suite(gateway_c, instances, nullptr, options),
                       "injected crash", std::runtime_error);
  const auto surviving = kteval::load_records((dir_c / "records.jsonl").string());
  CHECK(surviving.size() >= 8);
  CHECK(surviving.size() < instances.size());

  options.progress = nullptr;
  options.resume = true;
  kteval::ModelGateway gateway_resume(mock_config(42, 1024));
  const auto resumed = kteval::run_suite(gateway_resume, instances, nullptr, options);
  CHECK(resumed.records.size() == instances.size());
  CHECK(kteval::read_file((dir_c / "records.jsonl").string()) == bytes_a);
  // The resumed process only paid for the missing instances.
  CHECK(gateway_resume.requests_sent() ==
        (instances.size() - surviving.size()) * 3);

  const std::string manifest = kteval::read_file((dir_c / "manifest.json").string());
  CHECK(manifest.find("\"status\": \"complete\"") != std::string::npos);
  CHECK(manifest.find("\"fingerprint\"") != std::string::npos);
}

TEST_CASE("run_suite rejects duplicate ids and empty instance lists") {
  auto instances = synth_instances(1, 4, 3, 5);
  REQUIRE(instances.size() >= 2);
  instances[1].instance_id = instances[0].instance_id;

  kteval::ModelGateway gateway(mock_config(1, std::nullopt));
  kteval::SuiteOptions options;
  options.samples = 1;
  CHECK_THROWS_AS((void)kteval::run_suite(gateway, instances, nullptr, options),
                  kteval::ProtocolError);
  CHECK_THROWS_AS((void)kteval::run_suite(gateway, {}, nullptr, options),
                  kteval::ProtocolError);
}
