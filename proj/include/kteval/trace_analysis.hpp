#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kteval/model_gateway.hpp"
#include "kteval/protocol.hpp"

namespace kteval {

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EpisodeLabel { Read, Plan, Implement, Analyze, Monitor, Explore, Verify };
inline constexpr int kEpisodeCount = 7;

std::string episode_label_name(EpisodeLabel label);
// Case-insensitive match of a trimmed reply against the seven names exactly;
// anything else is a non-answer.
std::optional<EpisodeLabel> parse_episode_label(const std::string& reply);

using Matrix7 = std::array<std::array<double, 7>, 7>;
using Counts7 = std::array<std::array<std::uint64_t, 7>, 7>;

struct EpisodeSequence {
  std::string instance_id;
  int sample_index = 0;
  std::vector<EpisodeLabel> labels;
  std::vector<std::string> segments;
};

// Splits on sentence terminators and blank lines, then merges pieces shorter
// than 10 approximate tokens into their successor (final piece into its
// predecessor).
std::vector<std::string> segment_trace(const std::string& trace_text);

struct LabelingStats {
  std::size_t calls = 0;
  std::size_t retries = 0;
  std::size_t dropped = 0;
};

// One labeling call per segment; a non-matching reply earns one retry under
// a different sample index, then the segment is dropped and counted. The
// returned sequence keeps labels and surviving segments index-aligned.
EpisodeSequence label_segments(const std::vector<std::string>& segments,
                               ModelGateway& labeler, LabelingStats* stats = nullptr);

// Consecutive duplicate labels collapsed to one; explicit so transition
// self-loops stay observable by default.
std::vector<EpisodeLabel> collapse_repeats(const std::vector<EpisodeLabel>& labels);

struct TransitionMatrix {
  Counts7 counts{};
  Matrix7 probabilities{};
  std::size_t n_sequences = 0;
  std::uint64_t n_transitions = 0;
  std::string group = "all";
};

// Counts consecutive label pairs across sequences and row-normalizes. Rows
// whose label never occurs as a source stay all-zero.
TransitionMatrix transition_matrix(const std::vector<EpisodeSequence>& sequences,
                                   const std::string& group = "all");

// Signed percentage-point differences, 100 * (correct - incorrect).
Matrix7 transition_diff(const TransitionMatrix& correct_group,
                        const TransitionMatrix& incorrect_group);

struct SequenceStats {
  std::size_t length = 0;
  int distinct_labels = 0;
  double transition_entropy_bits = 0.0;
  double self_loop_fraction = 0.0;
};

SequenceStats sequence_stats(const EpisodeSequence& sequence);

struct GroupStats {
  std::size_t n = 0;
  double mean_length = 0.0;
  double mean_distinct = 0.0;
  double mean_entropy = 0.0;
  double mean_self_loop = 0.0;
  double sd_length = 0.0;
  double sd_distinct = 0.0;
  double sd_entropy = 0.0;
  double sd_self_loop = 0.0;
};

GroupStats aggregate_stats(const std::vector<EpisodeSequence>& sequences);

struct GroupedSequences {
  std::vector<EpisodeSequence> correct;
  std::vector<EpisodeSequence> incorrect;
  // Sequences with no matching record/sample plus sequences whose sample
  // outcome was Invalid; correct + incorrect + orphans = total.
  std::size_t orphans = 0;
};

// A sequence joins the correct group iff its sample's outcome agrees with
// the record's ground truth.
GroupedSequences group_by_correctness(const std::vector<PredictionRecord>& records,
                                      const std::vector<EpisodeSequence>& sequences);

std::string counts_csv(const TransitionMatrix& matrix);
std::string probabilities_csv(const TransitionMatrix& matrix);
std::string diff_csv(const Matrix7& diff);
// Heatmap-ready rows: from,to,group,value.
std::string long_format_csv(const TransitionMatrix& correct_group,
                            const TransitionMatrix& incorrect_group);
std::string group_stats_csv(const GroupStats& correct_group,
                            const GroupStats& incorrect_group);

}  // namespace kteval
