#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kteval/dataset.hpp"
#include "kteval/model_gateway.hpp"
#include "kteval/prompting.hpp"

namespace kteval {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSettings {
  std::string tag;
  DatasetFormat format = DatasetFormat::Assist09;
  std::string path;
  double split_ratio = 0.8;
  std::optional<int> subsample_learners;
};

struct ExperimentSettings {
  PromptVariant variant = PromptVariant::NoOption;
  OutputMode mode = OutputMode::PredOnly;
  int history_length = 25;
  double weight_portion = 1.0;
  int samples = 10;
  std::uint64_t seed = 42;
  std::optional<int> cap;
  // Sweep entries; nullopt is the no-think row.
  std::vector<std::optional<int>> budgets;
  int last_k_positions = 0;
  std::string output_dir = "runs";
  std::string run_name;
};

struct ExperimentConfig {
  DatasetSettings dataset;
  ExperimentSettings experiment;
  ModelConfig model;
  ModelConfig judge;
};

// TOML subset: [section] headers, key = value with strings, integers,
// floats, booleans, and flat arrays; # comments. Unknown sections or keys
// are errors so typos fail loudly at validate time.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Stable sub-seeds for the independent random choices of one experiment.
std::uint64_t derived_seed(std::uint64_t base, std::uint64_t purpose);
inline constexpr std::uint64_t kSeedSplit = 1;
inline constexpr std::uint64_t kSeedSubsample = 2;
inline constexpr std::uint64_t kSeedCap = 3;
inline constexpr std::uint64_t kSeedMock = 4;
inline constexpr std::uint64_t kSeedJudge = 5;

std::string describe_config(const ExperimentConfig& config);

}  // namespace kteval
