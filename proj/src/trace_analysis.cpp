#include "kteval/trace_analysis.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "kteval/util.hpp"

namespace kteval {
namespace {

constexpr const char* kLabelNames[] = {"Read",    "Plan",    "Implement", "Analyze",
                                       "Monitor", "Explore", "Verify"};

std::string fixed6(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.6f", value);
  return buffer;
}

// Terminator rule: '.', '!' or '?' followed by whitespace or end of block
// ends a piece; blank lines always end one.
std::vector<std::string> raw_pieces(const std::string& text) {
  std::vector<std::string> pieces;
  std::string current;
  auto flush = [&]() {
    const std::string trimmed = trim(current);
    if (!trimmed.empty()) {
      pieces.push_back(trimmed);
    }
    current.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      // Look ahead for a blank line: newline plus only whitespace until the
      // next newline or end.
      std::size_t j = i + 1;
      while (j < text.size() && (text[j] == ' ' || text[j] == '\t' || text[j] == '\r')) {
        ++j;
      }
      if (j >= text.size() || text[j] == '\n') {
        flush();
        i = j;
        continue;
      }
      current += ' ';
      continue;
    }
    current += c;
    if (c == '.' || c == '!' || c == '?') {
      const bool at_end = i + 1 >= text.size();
      const char next = at_end ? ' ' : text[i + 1];
      if (at_end || next == ' ' || next == '\t' || next == '\n' || next == '\r') {
        flush();
      }
    }
  }
  flush();
  return pieces;
}

}  // namespace

std::string episode_label_name(EpisodeLabel label) {
  return kLabelNames[static_cast<std::size_t>(label)];
}

std::optional<EpisodeLabel> parse_episode_label(const std::string& reply) {
  const std::string lowered = to_lower(trim(reply));
  for (int i = 0; i < kEpisodeCount; ++i) {
    if (lowered == to_lower(kLabelNames[i])) {
      return static_cast<EpisodeLabel>(i);
    }
  }
  return std::nullopt;
}

std::vector<std::string> segment_trace(const std::string& trace_text) {
  if (trim(trace_text).empty()) {
    throw TraceError("cannot segment an empty trace");
  }
  const std::vector<std::string> pieces = raw_pieces(trace_text);

  std::vector<std::string> segments;
  std::string pending;
  for (const std::string& piece : pieces) {
    if (pending.empty()) {
      pending = piece;
    } else {
      pending += ' ';
      pending += piece;
    }
    if (approx_token_count(pending) >= 10) {
      segments.push_back(pending);
      pending.clear();
    }
  }
  if (!pending.empty()) {
    if (segments.empty()) {
      segments.push_back(pending);
    } else {
      segments.back() += ' ';
      segments.back() += pending;
    }
  }
  return segments;
}

EpisodeSequence label_segments(const std::vector<std::string>& segments,
                               ModelGateway& labeler, LabelingStats* stats) {
  if (segments.empty()) {
    throw TraceError("cannot label an empty segment list");
  }
  EpisodeSequence sequence;
  for (const std::string& segment : segments) {
    const RenderedPrompt prompt = render_trace_label_prompt(segment);
    std::optional<EpisodeLabel> label;
    for (int attempt = 0; attempt < 2 && !label; ++attempt) {
      if (stats) {
        attempt == 0 ? ++stats->calls : ++stats->retries;
      }
      const Completion completion = labeler.complete(prompt, attempt);
      label = parse_episode_label(completion.answer_text);
    }
    if (label) {
      sequence.labels.push_back(*label);
      sequence.segments.push_back(segment);
    } else if (stats) {
      ++stats->dropped;
    }
  }
  return sequence;
}

std::vector<EpisodeLabel> collapse_repeats(const std::vector<EpisodeLabel>& labels) {
  std::vector<EpisodeLabel> collapsed;
  for (const EpisodeLabel label : labels) {
    if (collapsed.empty() || collapsed.back() != label) {
      collapsed.push_back(label);
    }
  }
  return collapsed;
}

TransitionMatrix transition_matrix(const std::vector<EpisodeSequence>& sequences,
                                   const std::string& group) {
  TransitionMatrix matrix;
  matrix.group = group;
  matrix.n_sequences = sequences.size();

  bool any_transition = false;
  const std::int64_t n = static_cast<std::int64_t>(sequences.size());
#pragma omp parallel
  {
    // Integer accumulation commutes exactly, so per-thread tallies can merge
    // in any order without breaking reproducibility.
    Counts7 local{};
    bool local_any = false;
#pragma omp for schedule(static) nowait
    for (std::int64_t s = 0; s < n; ++s) {
      const std::vector<EpisodeLabel>& labels = sequences[static_cast<std::size_t>(s)].labels;
      for (std::size_t i = 0; i + 1 < labels.size(); ++i) {
        ++local[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(labels[i + 1])];
        local_any = true;
      }
    }
#pragma omp critical(kteval_transition_merge)
    {
      for (int r = 0; r < kEpisodeCount; ++r) {
        for (int c = 0; c < kEpisodeCount; ++c) {
          matrix.counts[r][c] += local[r][c];
        }
      }
      any_transition = any_transition || local_any;
    }
  }
  if (!any_transition) {
    throw TraceError("no transitions: every sequence has fewer than two labels");
  }

  for (int r = 0; r < kEpisodeCount; ++r) {
    std::uint64_t row_total = 0;
    for (int c = 0; c < kEpisodeCount; ++c) {
      row_total += matrix.counts[r][c];
      matrix.n_transitions += matrix.counts[r][c];
    }
    if (row_total > 0) {
      for (int c = 0; c < kEpisodeCount; ++c) {
        matrix.probabilities[r][c] =
            static_cast<double>(matrix.counts[r][c]) / static_cast<double>(row_total);
      }
    }
  }
  return matrix;
}

Matrix7 transition_diff(const TransitionMatrix& correct_group,
                        const TransitionMatrix& incorrect_group) {
  Matrix7 diff{};
  for (int r = 0; r < kEpisodeCount; ++r) {
    for (int c = 0; c < kEpisodeCount; ++c) {
      diff[r][c] = 100.0 * (correct_group.probabilities[r][c] -
                            incorrect_group.probabilities[r][c]);
    }
  }
  return diff;
}

SequenceStats sequence_stats(const EpisodeSequence& sequence) {
  SequenceStats stats;
  stats.length = sequence.labels.size();
  std::set<EpisodeLabel> distinct(sequence.labels.begin(), sequence.labels.end());
  stats.distinct_labels = static_cast<int>(distinct.size());
  if (sequence.labels.size() < 2) {
    return stats;
  }

  std::map<std::pair<EpisodeLabel, EpisodeLabel>, std::uint64_t> pair_counts;
  std::uint64_t self_loops = 0;
  const std::size_t transitions = sequence.labels.size() - 1;
  for (std::size_t i = 0; i + 1 < sequence.labels.size(); ++i) {
    ++pair_counts[{sequence.labels[i], sequence.labels[i + 1]}];
    if (sequence.labels[i] == sequence.labels[i + 1]) {
      ++self_loops;
    }
  }
  double entropy = 0.0;
  for (const auto& [pair, count] : pair_counts) {
    const double p = static_cast<double>(count) / static_cast<double>(transitions);
    entropy -= p * std::log2(p);
  }
  stats.transition_entropy_bits = entropy;
  stats.self_loop_fraction =
      static_cast<double>(self_loops) / static_cast<double>(transitions);
  return stats;
}

GroupStats aggregate_stats(const std::vector<EpisodeSequence>& sequences) {
  GroupStats group;
  group.n = sequences.size();
  if (sequences.empty()) {
    return group;
  }
  std::vector<SequenceStats> all;
  all.reserve(sequences.size());
  for (const EpisodeSequence& sequence : sequences) {
    all.push_back(sequence_stats(sequence));
  }
  const double n = static_cast<double>(all.size());
  for (const SequenceStats& s : all) {
    group.mean_length += static_cast<double>(s.length);
    group.mean_distinct += s.distinct_labels;
    group.mean_entropy += s.transition_entropy_bits;
    group.mean_self_loop += s.self_loop_fraction;
  }
  group.mean_length /= n;
  group.mean_distinct /= n;
  group.mean_entropy /= n;
  group.mean_self_loop /= n;
  for (const SequenceStats& s : all) {
    const double dl = static_cast<double>(s.length) - group.mean_length;
    const double dd = s.distinct_labels - group.mean_distinct;
    const double de = s.transition_entropy_bits - group.mean_entropy;
    const double ds = s.self_loop_fraction - group.mean_self_loop;
    group.sd_length += dl * dl;
    group.sd_distinct += dd * dd;
    group.sd_entropy += de * de;
    group.sd_self_loop += ds * ds;
  }
  group.sd_length = std::sqrt(group.sd_length / n);
  group.sd_distinct = std::sqrt(group.sd_distinct / n);
  group.sd_entropy = std::sqrt(group.sd_entropy / n);
  group.sd_self_loop = std::sqrt(group.sd_self_loop / n);
  return group;
}

GroupedSequences group_by_correctness(const std::vector<PredictionRecord>& records,
                                      const std::vector<EpisodeSequence>& sequences) {
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const PredictionRecord& record : records) {
    by_id[record.instance_id] = &record;
  }

  GroupedSequences grouped;
  for (const EpisodeSequence& sequence : sequences) {
    const auto it = by_id.find(sequence.instance_id);
    if (it == by_id.end() || sequence.sample_index < 0 ||
        static_cast<std::size_t>(sequence.sample_index) >= it->second->outcomes.size()) {
      ++grouped.orphans;
      continue;
    }
    const PredictionRecord& record = *it->second;
    const SampleOutcome outcome =
        record.outcomes[static_cast<std::size_t>(sequence.sample_index)];
    if (!outcome.valid()) {
      ++grouped.orphans;
      continue;
    }
    const bool predicted_correct = outcome.kind == OutcomeKind::Correct;
    if (predicted_correct == (record.ground_truth == 1)) {
      grouped.correct.push_back(sequence);
    } else {
      grouped.incorrect.push_back(sequence);
    }
  }
  return grouped;
}

std::string counts_csv(const TransitionMatrix& matrix) {
  std::string csv = "from";
  for (int c = 0; c < kEpisodeCount; ++c) {
    csv += ',';
    csv += kLabelNames[c];
  }
  csv += '\n';
  for (int r = 0; r < kEpisodeCount; ++r) {
    csv += kLabelNames[r];
    for (int c = 0; c < kEpisodeCount; ++c) {
      csv += ',' + std::to_string(matrix.counts[r][c]);
    }
    csv += '\n';
  }
  return csv;
}

std::string probabilities_csv(const TransitionMatrix& matrix) {
  std::string csv = "from";
  for (int c = 0; c < kEpisodeCount; ++c) {
    csv += ',';
    csv += kLabelNames[c];
  }
  csv += '\n';
  for (int r = 0; r < kEpisodeCount; ++r) {
    csv += kLabelNames[r];
    for (int c = 0; c < kEpisodeCount; ++c) {
      csv += ',' + fixed6(matrix.probabilities[r][c]);
    }
    csv += '\n';
  }
  return csv;
}

std::string diff_csv(const Matrix7& diff) {
  std::string csv = "from";
  for (int c = 0; c < kEpisodeCount; ++c) {
    csv += ',';
    csv += kLabelNames[c];
  }
  csv += '\n';
  for (int r = 0; r < kEpisodeCount; ++r) {
    csv += kLabelNames[r];
    for (int c = 0; c < kEpisodeCount; ++c) {
      csv += ',' + fixed6(diff[r][c]);
    }
    csv += '\n';
  }
  return csv;
}

std::string long_format_csv(const TransitionMatrix& correct_group,
                            const TransitionMatrix& incorrect_group) {
  std::string csv = "from,to,group,value\n";
  for (const TransitionMatrix* matrix : {&correct_group, &incorrect_group}) {
    for (int r = 0; r < kEpisodeCount; ++r) {
      for (int c = 0; c < kEpisodeCount; ++c) {
        csv += kLabelNames[r];
        csv += ',';
        csv += kLabelNames[c];
        csv += ',';
        csv += matrix->group;
        csv += ',' + fixed6(matrix->probabilities[r][c]) + '\n';
      }
    }
  }
  return csv;
}

std::string group_stats_csv(const GroupStats& correct_group,
                            const GroupStats& incorrect_group) {
  std::string csv =
      "group,n,mean_length,sd_length,mean_distinct,sd_distinct,"
      "mean_entropy_bits,sd_entropy_bits,mean_self_loop,sd_self_loop\n";
  const auto row = [](const char* name, const GroupStats& g) {
    std::string line = name;
    line += ',' + std::to_string(g.n);
    line += ',' + fixed6(g.mean_length) + ',' + fixed6(g.sd_length);
    line += ',' + fixed6(g.mean_distinct) + ',' + fixed6(g.sd_distinct);
    line += ',' + fixed6(g.mean_entropy) + ',' + fixed6(g.sd_entropy);
    line += ',' + fixed6(g.mean_self_loop) + ',' + fixed6(g.sd_self_loop);
    line += '\n';
    return line;
  };
  csv += row("correct", correct_group);
  csv += row("incorrect", incorrect_group);
  return csv;
}

}  // namespace kteval
