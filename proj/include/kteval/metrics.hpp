#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "kteval/protocol.hpp"

namespace kteval {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsSummary {
  double auc = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
  double invalid_sample_rate = 0.0;
  std::size_t degenerate_count = 0;
  bool f1_zero_division = false;
};

// Mann-Whitney statistic over (empirical_p, ground_truth) pairs with
// half-credit for ties. Exact integer pair counting, parallelized over the
// positive group; requires both classes present.
double auc(const std::vector<PredictionRecord>& records);

// Fraction of records whose majority label matches the ground truth.
double accuracy(const std::vector<PredictionRecord>& records);

// Positive class is Correct (y = 1). Zero-division degenerates to 0 and is
// reported through the flag when given.
double f1(const std::vector<PredictionRecord>& records, bool* zero_division = nullptr);

MetricsSummary compute_summary(const std::vector<PredictionRecord>& records);

std::string summary_to_json(const MetricsSummary& summary);
MetricsSummary summary_from_json(const std::string& text);

}  // namespace kteval
