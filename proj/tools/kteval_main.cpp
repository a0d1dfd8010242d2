#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kteval/config.hpp"
#include "kteval/dataset.hpp"
#include "kteval/judge.hpp"
#include "kteval/metrics.hpp"
#include "kteval/model_gateway.hpp"
#include "kteval/protocol.hpp"
#include "kteval/report.hpp"
#include "kteval/trace_analysis.hpp"
#include "kteval/util.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;
constexpr int kExitEmpty = 4;

struct CliOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> cap;
  std::optional<std::string> budget;
  std::optional<std::string> variant;
  std::optional<std::string> mode;
  std::optional<std::string> provider;
  std::optional<std::string> run_name;
  std::optional<std::string> output_dir;
  bool resume = false;
};

kteval::ExperimentConfig load_with_overrides(const CliOverrides& cli) {
  kteval::ExperimentConfig config = kteval::load_config(cli.config_path);
  if (cli.seed) {
    config.experiment.seed = *cli.seed;
  }
  if (cli.cap) {
    config.experiment.cap = *cli.cap;
  }
  if (cli.variant) {
    config.experiment.variant = kteval::parse_variant(*cli.variant);
  }
  if (cli.mode) {
    config.experiment.mode = kteval::parse_mode(*cli.mode);
  }
  if (cli.provider) {
    config.model.provider = kteval::parse_provider(*cli.provider);
  }
  if (cli.run_name) {
    config.experiment.run_name = *cli.run_name;
  }
  if (cli.output_dir) {
    config.experiment.output_dir = *cli.output_dir;
  }
  if (cli.budget) {
    const std::string lowered = kteval::to_lower(kteval::trim(*cli.budget));
    config.experiment.budgets.clear();
    if (lowered == "none") {
      config.experiment.budgets.push_back(std::nullopt);
    } else {
      try {
        config.experiment.budgets.push_back(std::stoi(lowered));
      } catch (const std::exception&) {
        throw kteval::ConfigError("--budget expects an integer or 'none'");
      }
    }
  }
  config.model.validate();
  return config;
}

std::string lower_label(std::optional<int> budget) {
  return kteval::to_lower(kteval::think_mode_label(budget));
}

// The test split, windowed into instances per the experiment settings, plus
// the option statistics computed from the training split only.
struct PreparedData {
  std::vector<kteval::EvalInstance> instances;
  kteval::OptionWeightTable weights;
};

PreparedData prepare_data(const kteval::ExperimentConfig& config) {
  const std::uint64_t seed = config.experiment.seed;
  kteval::ParseResult parsed =
      kteval::parse_dataset(config.dataset.format, config.dataset.path);
  std::cerr << "parsed " << parsed.sequences.size() << " learners ("
            << parsed.dropped_rows << " rows dropped, " << parsed.merged_duplicates
            << " duplicates merged)\n";

  std::vector<kteval::LearnerSequence> sequences = std::move(parsed.sequences);
  if (config.dataset.subsample_learners) {
    sequences = kteval::subsample_learners(
        sequences, static_cast<std::size_t>(*config.dataset.subsample_learners),
        kteval::derived_seed(seed, kteval::kSeedSubsample));
  }
  auto [train, test] = kteval::split_learners(sequences, config.dataset.split_ratio,
                                              kteval::derived_seed(seed, kteval::kSeedSplit));

  PreparedData data;
  data.weights = kteval::compute_option_stats(train);
  data.instances = kteval::build_instances(
      test, static_cast<std::size_t>(config.experiment.history_length),
      static_cast<std::size_t>(config.experiment.last_k_positions));
  if (config.experiment.cap) {
    data.instances = kteval::cap_instances(
        data.instances, static_cast<std::size_t>(*config.experiment.cap),
        kteval::derived_seed(seed, kteval::kSeedCap));
  }
  std::cerr << "evaluation instances: " << data.instances.size() << " (train learners "
            << train.size() << ", test learners " << test.size() << ")\n";
  return data;
}

kteval::ModelConfig model_for_budget(const kteval::ExperimentConfig& config,
                                     std::optional<int> budget) {
  kteval::ModelConfig model = config.model;
  model.thinking_budget = budget;
  if (model.provider == kteval::Provider::Mock && model.mock_seed == 0) {
    model.mock_seed = kteval::derived_seed(config.experiment.seed, kteval::kSeedMock);
  }
  return model;
}

kteval::ModelConfig judge_model(const kteval::ExperimentConfig& config) {
  kteval::ModelConfig model = config.judge;
  if (model.provider == kteval::Provider::Mock && model.mock_seed == 0) {
    model.mock_seed = kteval::derived_seed(config.experiment.seed, kteval::kSeedJudge);
  }
  return model;
}

int cmd_run(const CliOverrides& cli) {
  const kteval::ExperimentConfig config = load_with_overrides(cli);
  const PreparedData data = prepare_data(config);
  if (data.instances.empty()) {
    std::cerr << "error: the evaluation split produced no instances\n";
    return kExitEmpty;
  }

  std::vector<std::optional<int>> budgets = config.experiment.budgets;
  if (budgets.empty()) {
    budgets.push_back(config.model.thinking_budget);
  }

  std::vector<kteval::SweepRow> rows;
  std::uint64_t total_samples = 0;
  std::uint64_t transport_failed = 0;
  std::string base_name;
  for (const std::optional<int>& budget : budgets) {
    const kteval::ModelConfig model = model_for_budget(config, budget);
    kteval::ModelGateway gateway(model);

    kteval::SuiteOptions options;
    options.variant = config.experiment.variant;
    options.mode = config.experiment.mode;
    options.samples = config.experiment.samples;
    options.history_length = config.experiment.history_length;
    options.weight_portion = config.experiment.weight_portion;
    options.dataset_tag = config.dataset.tag;
    options.resume = cli.resume;
    const std::string fingerprint = kteval::describe_fingerprint(
        model, options.variant, options.mode, options.samples, options.history_length,
        options.dataset_tag);
    options.run_id = config.experiment.run_name.empty()
                         ? "run-" + fingerprint.substr(0, 12)
                         : config.experiment.run_name + "-" + lower_label(budget);
    options.run_dir =
        (std::filesystem::path(config.experiment.output_dir) / options.run_id).string();
    if (base_name.empty()) {
      base_name = config.experiment.run_name.empty() ? options.run_id
                                                     : config.experiment.run_name;
    }

    std::cerr << "running " << options.run_id << " (" << kteval::think_mode_label(budget)
              << ", " << data.instances.size() << " instances x " << options.samples
              << " samples)\n";
    const kteval::RunRecord run =
        kteval::run_suite(gateway, data.instances, &data.weights, options);
    total_samples += run.counters.completions;
    transport_failed += run.counters.transport_failures;

    kteval::SweepRow row;
    row.budget = budget;
    row.run_dir = options.run_dir;
    try {
      row.summary = kteval::compute_summary(run.records);
      kteval::write_file_atomic(std::filesystem::path(options.run_dir) / "metrics.json",
                                kteval::summary_to_json(row.summary));
    } catch (const kteval::MetricsError& e) {
      std::cerr << "warning: metrics unavailable for " << options.run_id << ": " << e.what()
                << "\n";
      row.summary.n = run.records.size();
    }
    rows.push_back(std::move(row));
  }

  if (total_samples > 0 && transport_failed == total_samples) {
    std::cerr << "error: every model call failed at the transport layer\n";
    return kExitTransport;
  }

  const std::string table = kteval::sweep_table_text(
      config.dataset.tag, config.experiment.variant, config.experiment.mode, rows);
  std::cout << table;
  const std::string csv = kteval::sweep_table_csv(
      config.dataset.tag, config.experiment.variant, config.experiment.mode, rows);
  const std::filesystem::path csv_path =
      std::filesystem::path(config.experiment.output_dir) / (base_name + "-sweep.csv");
  kteval::write_file_atomic(csv_path, csv);
  std::cerr << "wrote " << csv_path.string() << "\n";
  return kExitOk;
}

int cmd_judge(const CliOverrides& cli, const std::string& run_dir,
              const std::string& target) {
  const kteval::ExperimentConfig config = load_with_overrides(cli);
  const std::filesystem::path records_path =
      std::filesystem::path(run_dir) / "records.jsonl";
  if (!std::filesystem::exists(records_path)) {
    std::cerr << "error: " << records_path.string() << " not found\n";
    return kExitEmpty;
  }
  const std::vector<kteval::PredictionRecord> records =
      kteval::load_records(records_path.string());
  if (records.empty()) {
    std::cerr << "error: no records in " << records_path.string() << "\n";
    return kExitEmpty;
  }

  kteval::ModelGateway gateway(judge_model(config));
  const std::filesystem::path judge_dir = std::filesystem::path(run_dir) / "judge";
  std::filesystem::create_directories(judge_dir);

  const bool want_fb = target == "fb" || target == "both";
  const bool want_rec = target == "rec" || target == "both";
  kteval::JudgeReport fb_report;
  kteval::JudgeReport rec_report;
  std::size_t scored = 0;
  std::size_t transport = 0;
  if (want_fb) {
    const kteval::JudgeRunResult result = kteval::judge_records(
        records, gateway, kteval::JudgeTarget::Feedback,
        (judge_dir / "feedback_scores.jsonl").string());
    fb_report = kteval::aggregate_scores(result.scores);
    fb_report.parse_failures = result.parse_failures;
    fb_report.judge_model = gateway.config().model;
    scored += result.scores.size();
    transport += result.transport_failures;
    std::cerr << "feedback: scored " << result.scores.size() << ", parse failures "
              << result.parse_failures << ", skipped " << result.skipped_missing_text
              << "\n";
  }
  if (want_rec) {
    const kteval::JudgeRunResult result = kteval::judge_records(
        records, gateway, kteval::JudgeTarget::Recommendation,
        (judge_dir / "recommendation_scores.jsonl").string());
    rec_report = kteval::aggregate_scores(result.scores);
    rec_report.parse_failures = result.parse_failures;
    rec_report.judge_model = gateway.config().model;
    scored += result.scores.size();
    transport += result.transport_failures;
    std::cerr << "recommendation: scored " << result.scores.size() << ", parse failures "
              << result.parse_failures << ", skipped " << result.skipped_missing_text
              << "\n";
  }

  const std::string csv = kteval::judge_report_csv(fb_report, rec_report);
  kteval::write_file_atomic(judge_dir / "report.csv", csv);
  std::cout << csv;
  if (scored == 0 && transport > 0) {
    return kExitTransport;
  }
  if (scored == 0) {
    std::cerr << "error: no records carried judgeable text\n";
    return kExitEmpty;
  }
  return kExitOk;
}

int cmd_trace(const CliOverrides& cli, const std::string& run_dir) {
  const kteval::ExperimentConfig config = load_with_overrides(cli);
  const std::filesystem::path records_path =
      std::filesystem::path(run_dir) / "records.jsonl";
  if (!std::filesystem::exists(records_path)) {
    std::cerr << "error: " << records_path.string() << " not found\n";
    return kExitEmpty;
  }
  const std::vector<kteval::PredictionRecord> records =
      kteval::load_records(records_path.string());

  struct TraceJob {
    const kteval::PredictionRecord* record;
    int sample_index;
  };
  std::vector<TraceJob> jobs;
  for (const kteval::PredictionRecord& record : records) {
    for (std::size_t i = 0; i < record.traces.size(); ++i) {
      if (!kteval::trim(record.traces[i]).empty()) {
        jobs.push_back({&record, static_cast<int>(i)});
      }
    }
  }
  if (jobs.empty()) {
    std::cerr << "error: the run holds no reasoning traces (no-think run?)\n";
    return kExitEmpty;
  }

  kteval::ModelGateway labeler(judge_model(config));
  std::vector<kteval::EpisodeSequence> sequences;
  kteval::LabelingStats stats;
  std::size_t empty_sequences = 0;
  std::mutex sink;
  std::exception_ptr first_error;
  const int threads = std::max(1, labeler.config().max_parallel);
  const std::int64_t n_jobs = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::int64_t j = 0; j < n_jobs; ++j) {
    try {
      const TraceJob& job = jobs[static_cast<std::size_t>(j)];
      const std::vector<std::string> segments = kteval::segment_trace(
          job.record->traces[static_cast<std::size_t>(job.sample_index)]);
      kteval::LabelingStats local_stats;
      kteval::EpisodeSequence sequence =
          kteval::label_segments(segments, labeler, &local_stats);
      sequence.instance_id = job.record->instance_id;
      sequence.sample_index = job.sample_index;
      std::lock_guard<std::mutex> lock(sink);
      stats.calls += local_stats.calls;
      stats.retries += local_stats.retries;
      stats.dropped += local_stats.dropped;
      if (sequence.labels.empty()) {
        ++empty_sequences;
      } else {
        sequences.push_back(std::move(sequence));
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(sink);
      if (!first_error) {
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }
  std::sort(sequences.begin(), sequences.end(),
            [](const kteval::EpisodeSequence& a, const kteval::EpisodeSequence& b) {
              return a.instance_id != b.instance_id ? a.instance_id < b.instance_id
                                                    : a.sample_index < b.sample_index;
            });
  std::cerr << "labeled " << sequences.size() << " sequences (" << stats.calls
            << " calls, " << stats.retries << " retries, " << stats.dropped
            << " segments dropped, " << empty_sequences << " sequences empty)\n";

  const std::filesystem::path trace_dir = std::filesystem::path(run_dir) / "trace";
  std::filesystem::create_directories(trace_dir);

  const kteval::GroupedSequences grouped = kteval::group_by_correctness(records, sequences);
  std::cerr << "groups: correct " << grouped.correct.size() << ", incorrect "
            << grouped.incorrect.size() << ", orphans " << grouped.orphans << "\n";

  const kteval::TransitionMatrix all_matrix = kteval::transition_matrix(sequences, "all");
  kteval::write_file_atomic(trace_dir / "counts_all.csv", kteval::counts_csv(all_matrix));
  kteval::write_file_atomic(trace_dir / "probs_all.csv",
                            kteval::probabilities_csv(all_matrix));

  const kteval::GroupStats correct_stats = kteval::aggregate_stats(grouped.correct);
  const kteval::GroupStats incorrect_stats = kteval::aggregate_stats(grouped.incorrect);
  const std::string stats_csv = kteval::group_stats_csv(correct_stats, incorrect_stats);
  kteval::write_file_atomic(trace_dir / "stats.csv", stats_csv);
  std::cout << stats_csv;

  try {
    const kteval::TransitionMatrix correct_matrix =
        kteval::transition_matrix(grouped.correct, "correct");
    const kteval::TransitionMatrix incorrect_matrix =
        kteval::transition_matrix(grouped.incorrect, "incorrect");
    kteval::write_file_atomic(trace_dir / "counts_correct.csv",
                              kteval::counts_csv(correct_matrix));
    kteval::write_file_atomic(trace_dir / "probs_correct.csv",
                              kteval::probabilities_csv(correct_matrix));
    kteval::write_file_atomic(trace_dir / "counts_incorrect.csv",
                              kteval::counts_csv(incorrect_matrix));
    kteval::write_file_atomic(trace_dir / "probs_incorrect.csv",
                              kteval::probabilities_csv(incorrect_matrix));
    const kteval::Matrix7 diff = kteval::transition_diff(correct_matrix, incorrect_matrix);
    kteval::write_file_atomic(trace_dir / "diff_pp.csv", kteval::diff_csv(diff));
    kteval::write_file_atomic(trace_dir / "transitions_long.csv",
                              kteval::long_format_csv(correct_matrix, incorrect_matrix));
  } catch (const kteval::TraceError& e) {
    std::cerr << "warning: group contrast unavailable: " << e.what() << "\n";
  }
  std::cerr << "wrote " << trace_dir.string() << "\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir) {
  const std::filesystem::path records_path =
      std::filesystem::path(run_dir) / "records.jsonl";
  if (!std::filesystem::exists(records_path)) {
    std::cerr << "error: " << records_path.string() << " not found\n";
    return kExitEmpty;
  }
  const std::vector<kteval::PredictionRecord> records =
      kteval::load_records(records_path.string());
  if (records.empty()) {
    std::cerr << "error: no records in " << records_path.string() << "\n";
    return kExitEmpty;
  }

  std::cout << "run: " << run_dir << "\n";
  std::cout << "records: " << records.size() << "\n";
  try {
    const kteval::MetricsSummary summary = kteval::compute_summary(records);
    std::cout << kteval::summary_text(summary);
  } catch (const kteval::MetricsError& e) {
    std::cout << "metrics unavailable: " << e.what() << "\n";
  }

  const std::filesystem::path judge_csv =
      std::filesystem::path(run_dir) / "judge" / "report.csv";
  if (std::filesystem::exists(judge_csv)) {
    std::cout << "\njudge report:\n" << kteval::read_file(judge_csv);
  }
  const std::filesystem::path stats_csv =
      std::filesystem::path(run_dir) / "trace" / "stats.csv";
  if (std::filesystem::exists(stats_csv)) {
    std::cout << "\ntrace stats:\n" << kteval::read_file(stats_csv);
  }
  return kExitOk;
}

int cmd_validate(const CliOverrides& cli) {
  const kteval::ExperimentConfig config = load_with_overrides(cli);
  std::cout << kteval::describe_config(config);
  std::cout << "config ok\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-tracing evaluation harness"};
  app.require_subcommand(1);

  CliOverrides cli;
  std::string run_dir;
  std::string judge_target = "both";

  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    CLI::Option* opt = sub->add_option("--config", cli.config_path, "experiment config file");
    if (needs_config) {
      opt->required();
    }
    sub->add_option("--seed", cli.seed, "override experiment seed");
    sub->add_option("--cap", cli.cap, "override instance cap");
    sub->add_option("--budget", cli.budget, "override thinking budget (integer or 'none')");
    sub->add_option("--variant", cli.variant, "override prompt variant");
    sub->add_option("--mode", cli.mode, "override output mode");
    sub->add_option("--provider", cli.provider, "override model provider");
    sub->add_option("--run-name", cli.run_name, "name run directories");
    sub->add_option("--output-dir", cli.output_dir, "override output directory");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run the prediction protocol");
  add_common(run_cmd, true);
  run_cmd->add_flag("--resume", cli.resume, "skip instances already persisted");

  CLI::App* judge_cmd = app.add_subcommand("judge", "score generated text with the judge");
  add_common(judge_cmd, true);
  judge_cmd->add_option("--run", run_dir, "run directory")->required();
  judge_cmd->add_option("--target", judge_target, "fb, rec, or both")
      ->check(CLI::IsMember({"fb", "rec", "both"}));

  CLI::App* trace_cmd = app.add_subcommand("trace", "label and analyze reasoning traces");
  add_common(trace_cmd, true);
  trace_cmd->add_option("--run", run_dir, "run directory")->required();

  CLI::App* report_cmd = app.add_subcommand("report", "summarize a finished run");
  report_cmd->add_option("--run", run_dir, "run directory")->required();

  CLI::App* validate_cmd = app.add_subcommand("validate-config", "parse and echo a config");
  add_common(validate_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) {
      return cmd_run(cli);
    }
    if (judge_cmd->parsed()) {
      return cmd_judge(cli, run_dir, judge_target);
    }
    if (trace_cmd->parsed()) {
      return cmd_trace(cli, run_dir);
    }
    if (report_cmd->parsed()) {
      return cmd_report(run_dir);
    }
    if (validate_cmd->parsed()) {
      return cmd_validate(cli);
    }
  } catch (const kteval::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const kteval::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const kteval::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
