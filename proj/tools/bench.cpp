#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include <CLI11.hpp>

#include "kteval/metrics.hpp"
#include "kteval/protocol.hpp"
#include "kteval/reference.hpp"
#include "kteval/trace_analysis.hpp"
#include "kteval/util.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<kteval::PredictionRecord> synthetic_records(std::size_t n, std::uint64_t seed) {
  std::vector<kteval::PredictionRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Coarse probabilities mimic the 10-sample grid so ties actually occur.
    const std::uint64_t h = kteval::mix_hash({seed, i});
    const int grid = static_cast<int>(h % 11);
    kteval::PredictionRecord record;
    record.instance_id = "bench:" + std::to_string(i);
    record.empirical_p = static_cast<double>(grid) / 10.0;
    const double skill = kteval::unit_interval(kteval::splitmix64(h));
    record.ground_truth = skill < record.empirical_p * 0.8 + 0.1 ? 1 : 0;
    record.majority_label =
        record.empirical_p >= 0.5 ? kteval::OutcomeKind::Correct : kteval::OutcomeKind::Wrong;
    records.push_back(std::move(record));
  }
  // Both classes must exist for AUC.
  records[0].ground_truth = 1;
  records[1 % n].ground_truth = 0;
  return records;
}

std::vector<kteval::EpisodeSequence> synthetic_sequences(std::size_t n, std::uint64_t seed) {
  std::vector<kteval::EpisodeSequence> sequences;
  sequences.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    kteval::EpisodeSequence sequence;
    sequence.instance_id = "bench:" + std::to_string(i);
    const std::uint64_t h = kteval::mix_hash({seed, i, 7});
    const std::size_t length = 2 + h % 14;
    std::uint64_t state = h;
    for (std::size_t j = 0; j < length; ++j) {
      sequence.labels.push_back(
          static_cast<kteval::EpisodeLabel>(kteval::bounded_rand(state, 7)));
    }
    sequences.push_back(std::move(sequence));
  }
  return sequences;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compare parallel metric kernels against their serial references"};
  std::size_t n_records = 20000;
  std::size_t n_sequences = 50000;
  int repeats = 3;
  std::uint64_t seed = 7;
  app.add_option("--records", n_records, "record count for AUC/ACC/F1");
  app.add_option("--sequences", n_sequences, "sequence count for transitions");
  app.add_option("--repeat", repeats, "timing repetitions");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  const std::vector<kteval::PredictionRecord> records = synthetic_records(n_records, seed);
  std::vector<kteval::reference::LabeledScore> scores;
  std::vector<bool> predicted;
  std::vector<int> truth;
  for (const kteval::PredictionRecord& record : records) {
    scores.push_back({record.empirical_p, record.ground_truth});
    predicted.push_back(record.majority_label == kteval::OutcomeKind::Correct);
    truth.push_back(record.ground_truth);
  }

  std::printf("%zu records, %zu sequences, best of %d\n\n", n_records, n_sequences, repeats);
  std::printf("%-22s %12s %12s %10s %s\n", "kernel", "parallel ms", "serial ms", "speedup",
              "match");

  double fast_ms = 1e300;
  double slow_ms = 1e300;
  double fast_auc = 0.0;
  double slow_auc = 0.0;
  for (int r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    fast_auc = kteval::auc(records);
    fast_ms = std::min(fast_ms, ms_since(t0));
    t0 = Clock::now();
    slow_auc = kteval::reference::auc_pairwise(scores);
    slow_ms = std::min(slow_ms, ms_since(t0));
  }
  std::printf("%-22s %12.2f %12.2f %9.2fx %s\n", "auc", fast_ms, slow_ms, slow_ms / fast_ms,
              std::fabs(fast_auc - slow_auc) < 1e-12 ? "yes" : "NO");

  const kteval::reference::Confusion confusion =
      kteval::reference::confusion_matrix(predicted, truth);
  const bool acc_match = std::fabs(kteval::accuracy(records) -
                                   kteval::reference::accuracy_from_confusion(confusion)) <
                         1e-15;
  const bool f1_match =
      std::fabs(kteval::f1(records) - kteval::reference::f1_from_confusion(confusion)) <
      1e-15;
  std::printf("%-22s %12s %12s %10s %s\n", "accuracy", "-", "-", "-",
              acc_match ? "yes" : "NO");
  std::printf("%-22s %12s %12s %10s %s\n", "f1", "-", "-", "-", f1_match ? "yes" : "NO");

  const std::vector<kteval::EpisodeSequence> sequences =
      synthetic_sequences(n_sequences, seed);
  std::vector<std::vector<int>> index_sequences;
  index_sequences.reserve(sequences.size());
  for (const kteval::EpisodeSequence& sequence : sequences) {
    std::vector<int> labels;
    labels.reserve(sequence.labels.size());
    for (const kteval::EpisodeLabel label : sequence.labels) {
      labels.push_back(static_cast<int>(label));
    }
    index_sequences.push_back(std::move(labels));
  }

  fast_ms = 1e300;
  slow_ms = 1e300;
  kteval::TransitionMatrix matrix;
  std::array<std::array<std::uint64_t, 7>, 7> serial_counts{};
  for (int r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    matrix = kteval::transition_matrix(sequences);
    fast_ms = std::min(fast_ms, ms_since(t0));
    t0 = Clock::now();
    serial_counts = kteval::reference::transition_counts_serial(index_sequences);
    slow_ms = std::min(slow_ms, ms_since(t0));
  }
  bool counts_match = true;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      counts_match = counts_match && matrix.counts[i][j] == serial_counts[i][j];
    }
  }
  std::printf("%-22s %12.2f %12.2f %9.2fx %s\n", "transition counts", fast_ms, slow_ms,
              slow_ms / fast_ms, counts_match ? "yes" : "NO");

  const bool all_match = acc_match && f1_match && counts_match &&
                         std::fabs(fast_auc - slow_auc) < 1e-12;
  return all_match ? 0 : 1;
}
