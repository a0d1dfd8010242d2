#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kteval/metrics.hpp"
#include "kteval/prompting.hpp"

namespace kteval {

// "No-Think" for an absent budget, "Think-<B>" otherwise.
std::string think_mode_label(std::optional<int> budget);

struct SweepRow {
  std::optional<int> budget;
  MetricsSummary summary;
  std::string run_dir;
};

// One row per thinking budget, Table-style: mode label then AUC/ACC/F1.
std::string sweep_table_text(const std::string& dataset_tag, PromptVariant variant,
                             OutputMode mode, const std::vector<SweepRow>& rows);
std::string sweep_table_csv(const std::string& dataset_tag, PromptVariant variant,
                            OutputMode mode, const std::vector<SweepRow>& rows);

std::string summary_text(const MetricsSummary& summary);

}  // namespace kteval
