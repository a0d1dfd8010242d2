#pragma once

// Hand-built 50-sequence episode fixture. Four fixed patterns repeat, so
// every transition count, probability, entropy, and self-loop value below is
// derivable by hand:
//
//   A x15 (correct):   Read -> Analyze -> Analyze -> Verify
//   B x10 (correct):   Read -> Plan -> Implement -> Verify -> Verify
//   C x15 (incorrect): Read -> Implement -> Implement -> Implement
//   D x10 (incorrect): Read -> Explore -> Explore -> Monitor
//
// Combined counts (from -> to): Read row P=10 I=15 A=15 E=10 (total 50);
// Plan->Implement 10; Implement row I=30 V=10 (total 40); Analyze row A=15
// V=15 (total 30); Explore row E=10 M=10 (total 20); Verify->Verify 10;
// Monitor row empty. 160 transitions overall, 85 correct / 75 incorrect.

#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "kteval/protocol.hpp"
#include "kteval/trace_analysis.hpp"

namespace ktest {

struct TraceFixture {
  std::vector<kteval::EpisodeSequence> sequences;           // all 50
  std::vector<kteval::PredictionRecord> records;            // one per sequence
  std::vector<kteval::EpisodeSequence> correct_sequences;   // A + B
  std::vector<kteval::EpisodeSequence> incorrect_sequences; // C + D
};

inline TraceFixture trace_fixture() {
  using kteval::EpisodeLabel;
  const std::vector<EpisodeLabel> pattern_a = {EpisodeLabel::Read, EpisodeLabel::Analyze,
                                               EpisodeLabel::Analyze, EpisodeLabel::Verify};
  const std::vector<EpisodeLabel> pattern_b = {EpisodeLabel::Read, EpisodeLabel::Plan,
                                               EpisodeLabel::Implement, EpisodeLabel::Verify,
                                               EpisodeLabel::Verify};
  const std::vector<EpisodeLabel> pattern_c = {EpisodeLabel::Read, EpisodeLabel::Implement,
                                               EpisodeLabel::Implement,
                                               EpisodeLabel::Implement};
  const std::vector<EpisodeLabel> pattern_d = {EpisodeLabel::Read, EpisodeLabel::Explore,
                                               EpisodeLabel::Explore, EpisodeLabel::Monitor};

  TraceFixture fixture;
  int next_id = 0;
  const auto add = [&](const std::vector<EpisodeLabel>& pattern, int copies,
                       bool prediction_matches) {
    for (int i = 0; i < copies; ++i) {
      kteval::EpisodeSequence sequence;
      char id[16];
      std::snprintf(id, sizeof(id), "f%02d", next_id++);
      sequence.instance_id = id;
      sequence.sample_index = 0;
      sequence.labels = pattern;
      sequence.segments.assign(pattern.size(), "segment text");
      fixture.sequences.push_back(sequence);
      (prediction_matches ? fixture.correct_sequences : fixture.incorrect_sequences)
          .push_back(sequence);

      kteval::PredictionRecord record;
      record.instance_id = sequence.instance_id;
      record.ground_truth = 1;
      record.outcomes.push_back({prediction_matches ? kteval::OutcomeKind::Correct
                                                    : kteval::OutcomeKind::Wrong,
                                 kteval::InvalidReason::None});
      fixture.records.push_back(record);
    }
  };
  add(pattern_a, 15, true);
  add(pattern_b, 10, true);
  add(pattern_c, 15, false);
  add(pattern_d, 10, false);
  return fixture;
}

// Index shorthand matching EpisodeLabel's declaration order.
enum : std::size_t { R = 0, P = 1, I = 2, A = 3, M = 4, E = 5, V = 6 };

inline kteval::Counts7 expected_counts_all() {
  kteval::Counts7 counts{};
  counts[R][P] = 10;
  counts[R][I] = 15;
  counts[R][A] = 15;
  counts[R][E] = 10;
  counts[P][I] = 10;
  counts[I][I] = 30;
  counts[I][V] = 10;
  counts[A][A] = 15;
  counts[A][V] = 15;
  counts[E][E] = 10;
  counts[E][M] = 10;
  counts[V][V] = 10;
  return counts;
}

inline kteval::Matrix7 expected_probabilities_all() {
  kteval::Matrix7 probabilities{};
  probabilities[R][P] = 0.2;
  probabilities[R][I] = 0.3;
  probabilities[R][A] = 0.3;
  probabilities[R][E] = 0.2;
  probabilities[P][I] = 1.0;
  probabilities[I][I] = 0.75;
  probabilities[I][V] = 0.25;
  probabilities[A][A] = 0.5;
  probabilities[A][V] = 0.5;
  probabilities[E][E] = 0.5;
  probabilities[E][M] = 0.5;
  probabilities[V][V] = 1.0;
  return probabilities;
}

inline kteval::Matrix7 expected_probabilities_correct() {
  kteval::Matrix7 probabilities{};
  probabilities[R][A] = 0.6;
  probabilities[R][P] = 0.4;
  probabilities[A][A] = 0.5;
  probabilities[A][V] = 0.5;
  probabilities[P][I] = 1.0;
  probabilities[I][V] = 1.0;
  probabilities[V][V] = 1.0;
  return probabilities;
}

inline kteval::Matrix7 expected_probabilities_incorrect() {
  kteval::Matrix7 probabilities{};
  probabilities[R][I] = 0.6;
  probabilities[R][E] = 0.4;
  probabilities[I][I] = 1.0;
  probabilities[E][E] = 0.5;
  probabilities[E][M] = 0.5;
  return probabilities;
}

}  // namespace ktest
