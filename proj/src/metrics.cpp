#include "kteval/metrics.hpp"

#include <algorithm>
#include <cstdint>

#include <json.hpp>

namespace kteval {
namespace {

using ordered_json = nlohmann::ordered_json;

}  // namespace

double auc(const std::vector<PredictionRecord>& records) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (const PredictionRecord& record : records) {
    (record.ground_truth == 1 ? pos : neg).push_back(record.empirical_p);
  }
  if (pos.empty() || neg.empty()) {
    throw MetricsError("AUC is undefined with a single ground-truth class");
  }

  // Sorting the negative group turns each positive's pair count into two
  // binary searches; ties are exact because equal rational p values divide
  // to identical doubles.
  std::sort(neg.begin(), neg.end());
  std::uint64_t wins2 = 0;  // doubled so ties add exactly 1
  const std::int64_t n_pos = static_cast<std::int64_t>(pos.size());
#pragma omp parallel for schedule(static) reduction(+ : wins2)
  for (std::int64_t i = 0; i < n_pos; ++i) {
    const double p = pos[static_cast<std::size_t>(i)];
    const auto lower = std::lower_bound(neg.begin(), neg.end(), p);
    const auto upper = std::upper_bound(neg.begin(), neg.end(), p);
    const std::uint64_t below = static_cast<std::uint64_t>(lower - neg.begin());
    const std::uint64_t ties = static_cast<std::uint64_t>(upper - lower);
    wins2 += 2 * below + ties;
  }
  return static_cast<double>(wins2) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty()) {
    throw MetricsError("accuracy is undefined on an empty record set");
  }
  std::uint64_t matches = 0;
  for (const PredictionRecord& record : records) {
    const bool predicted_correct = record.majority_label == OutcomeKind::Correct;
    if (predicted_correct == (record.ground_truth == 1)) {
      ++matches;
    }
  }
  return static_cast<double>(matches) / static_cast<double>(records.size());
}

double f1(const std::vector<PredictionRecord>& records, bool* zero_division) {
  if (records.empty()) {
    throw MetricsError("F1 is undefined on an empty record set");
  }
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  for (const PredictionRecord& record : records) {
    const bool predicted_correct = record.majority_label == OutcomeKind::Correct;
    if (predicted_correct && record.ground_truth == 1) {
      ++tp;
    } else if (predicted_correct && record.ground_truth == 0) {
      ++fp;
    } else if (!predicted_correct && record.ground_truth == 1) {
      ++fn;
    }
  }
  if (zero_division) {
    *zero_division = false;
  }
  if (tp == 0) {
    if (zero_division) {
      *zero_division = true;
    }
    return 0.0;
  }
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

MetricsSummary compute_summary(const std::vector<PredictionRecord>& records) {
  MetricsSummary summary;
  summary.n = records.size();
  summary.auc = auc(records);
  summary.accuracy = accuracy(records);
  summary.f1 = f1(records, &summary.f1_zero_division);

  std::uint64_t samples = 0;
  std::uint64_t invalid = 0;
  for (const PredictionRecord& record : records) {
    samples += record.outcomes.size();
    for (const SampleOutcome& outcome : record.outcomes) {
      if (!outcome.valid()) {
        ++invalid;
      }
    }
    if (record.degenerate) {
      ++summary.degenerate_count;
    }
  }
  summary.invalid_sample_rate =
      samples == 0 ? 0.0 : static_cast<double>(invalid) / static_cast<double>(samples);
  return summary;
}

std::string summary_to_json(const MetricsSummary& summary) {
  ordered_json doc;
  doc["auc"] = summary.auc;
  doc["accuracy"] = summary.accuracy;
  doc["f1"] = summary.f1;
  doc["n"] = summary.n;
  doc["invalid_sample_rate"] = summary.invalid_sample_rate;
  doc["degenerate_count"] = summary.degenerate_count;
  doc["f1_zero_division"] = summary.f1_zero_division;
  return doc.dump(2) + "\n";
}

MetricsSummary summary_from_json(const std::string& text) {
  const ordered_json doc = ordered_json::parse(text);
  MetricsSummary summary;
  summary.auc = doc.at("auc").get<double>();
  summary.accuracy = doc.at("accuracy").get<double>();
  summary.f1 = doc.at("f1").get<double>();
  summary.n = doc.at("n").get<std::size_t>();
  summary.invalid_sample_rate = doc.at("invalid_sample_rate").get<double>();
  summary.degenerate_count = doc.at("degenerate_count").get<std::size_t>();
  summary.f1_zero_division = doc.at("f1_zero_division").get<bool>();
  return summary;
}

}  // namespace kteval
