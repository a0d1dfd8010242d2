#pragma once

// Deliberately naive serial implementations of every parallelized kernel.
// They are the correctness oracles: tests and the benchmark tool compare the
// production kernels against these line-by-line translations of the metric
// definitions, so keep them free of any optimization.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace kteval::reference {

struct LabeledScore {
  double p = 0.0;
  int y = 0;
};

// O(n^2) pairwise Mann-Whitney AUC with half-credit ties. Returns NaN when
// either class is missing.
inline double auc_pairwise(const std::vector<LabeledScore>& scores) {
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  double wins = 0.0;
  for (const LabeledScore& a : scores) {
    if (a.y != 1) {
      continue;
    }
    ++positives;
    for (const LabeledScore& b : scores) {
      if (b.y != 0) {
        continue;
      }
      if (a.p > b.p) {
        wins += 1.0;
      } else if (a.p == b.p) {
        wins += 0.5;
      }
    }
  }
  for (const LabeledScore& b : scores) {
    if (b.y == 0) {
      ++negatives;
    }
  }
  if (positives == 0 || negatives == 0) {
    return std::nan("");
  }
  return wins / (static_cast<double>(positives) * static_cast<double>(negatives));
}

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;
};

// predicted_correct[i] pairs with y[i]; positive class is y = 1.
inline Confusion confusion_matrix(const std::vector<bool>& predicted_correct,
                                  const std::vector<int>& y) {
  Confusion c;
  for (std::size_t i = 0; i < predicted_correct.size(); ++i) {
    if (predicted_correct[i] && y[i] == 1) {
      ++c.tp;
    } else if (predicted_correct[i] && y[i] == 0) {
      ++c.fp;
    } else if (!predicted_correct[i] && y[i] == 0) {
      ++c.tn;
    } else {
      ++c.fn;
    }
  }
  return c;
}

inline double accuracy_from_confusion(const Confusion& c) {
  const std::uint64_t total = c.tp + c.fp + c.tn + c.fn;
  if (total == 0) {
    return std::nan("");
  }
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

inline double f1_from_confusion(const Confusion& c) {
  if (c.tp == 0) {
    return 0.0;
  }
  const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return 2.0 * precision * recall / (precision + recall);
}

// Serial transition counting over label index sequences (values 0..6).
inline std::array<std::array<std::uint64_t, 7>, 7> transition_counts_serial(
    const std::vector<std::vector<int>>& sequences) {
  std::array<std::array<std::uint64_t, 7>, 7> counts{};
  for (const std::vector<int>& labels : sequences) {
    for (std::size_t i = 0; i + 1 < labels.size(); ++i) {
      ++counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(labels[i + 1])];
    }
  }
  return counts;
}

}  // namespace kteval::reference
