#include "kteval/report.hpp"

#include <cstdio>

namespace kteval {
namespace {

std::string fixed4(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.4f", value);
  return buffer;
}

}  // namespace

std::string think_mode_label(std::optional<int> budget) {
  return budget ? "Think-" + std::to_string(*budget) : "No-Think";
}

std::string sweep_table_text(const std::string& dataset_tag, PromptVariant variant,
                             OutputMode mode, const std::vector<SweepRow>& rows) {
  std::string out = dataset_tag + " / " + variant_name(variant) + " / " + mode_name(mode) +
                    " (n=" + (rows.empty() ? "0" : std::to_string(rows.front().summary.n)) +
                    ")\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %10s\n", "mode", "AUC", "ACC", "F1",
                "invalid");
  out += line;
  for (const SweepRow& row : rows) {
    std::snprintf(line, sizeof(line), "%-12s %8.4f %8.4f %8.4f %10.4f\n",
                  think_mode_label(row.budget).c_str(), row.summary.auc,
                  row.summary.accuracy, row.summary.f1, row.summary.invalid_sample_rate);
    out += line;
  }
  return out;
}

std::string sweep_table_csv(const std::string& dataset_tag, PromptVariant variant,
                            OutputMode mode, const std::vector<SweepRow>& rows) {
  std::string csv = "dataset,variant,mode,think_mode,auc,acc,f1,n,invalid_rate,degenerate\n";
  for (const SweepRow& row : rows) {
    csv += dataset_tag + ',' + variant_name(variant) + ',' + mode_name(mode) + ',' +
           think_mode_label(row.budget) + ',' + fixed4(row.summary.auc) + ',' +
           fixed4(row.summary.accuracy) + ',' + fixed4(row.summary.f1) + ',' +
           std::to_string(row.summary.n) + ',' + fixed4(row.summary.invalid_sample_rate) +
           ',' + std::to_string(row.summary.degenerate_count) + '\n';
  }
  return csv;
}

std::string summary_text(const MetricsSummary& summary) {
  std::string out;
  out += "AUC      " + fixed4(summary.auc) + "\n";
  out += "ACC      " + fixed4(summary.accuracy) + "\n";
  out += "F1       " + fixed4(summary.f1) +
         (summary.f1_zero_division ? "  (zero division)" : "") + "\n";
  out += "n        " + std::to_string(summary.n) + "\n";
  out += "invalid  " + fixed4(summary.invalid_sample_rate) + "\n";
  out += "degener. " + std::to_string(summary.degenerate_count) + "\n";
  return out;
}

}  // namespace kteval
