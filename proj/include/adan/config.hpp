#pragma once

// Run configuration: one JSON document per run, with command-line overrides.
//
// {
//   "source":  {"format": "idx",  "images": "...", "labels": "...", "limit": 60000},
//   "target":  {"format": "usps", "path": "..."},
//   "eval":    {"format": "usps", "path": "..."},
//   "train":   {"epochs": 20, "batch_size": 128, "learning_rate": 0.001, "momentum": 0.9,
//               "weight_decay": 0.0001, "lambda": 1.0, "exit_weights": [1, 1], "eval_every": 1,
//               "bandwidth_multipliers": [0.25, 0.5, 1, 2, 4], "max_steps_per_epoch": null},
//   "seeds": [1, 2, 3, 4, 5],
//   "thresholds": [0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.75, 1.5],
//   "repeats": 5,
//   "output_dir": "runs/adan",
//   "deterministic": true
// }
//
// Relative paths resolve against the directory holding the config file.
// Every key is optional; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adan/data.hpp"
#include "adan/router.hpp"
#include "adan/trainer.hpp"

namespace adan {

struct DataSpec {
  std::string format = "idx";  // "idx" or "usps"
  std::filesystem::path path;  // IDX images file or USPS text file
  std::optional<std::filesystem::path> labels;
  std::optional<std::size_t> limit;
};

struct RunConfig {
  std::optional<DataSpec> source;
  std::optional<DataSpec> target;
  std::optional<DataSpec> eval;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> thresholds = default_sweep_thresholds();
  int repeats = 5;
  std::filesystem::path output_dir = "runs";
  bool deterministic = true;
};

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

struct Overrides {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::filesystem::path> output_dir;
  std::optional<double> lambda;
  std::vector<double> thresholds;
  std::optional<int> epochs;
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

enum class Command { Train, Eval, Sweep };

/// Throws ConfigError naming the offending field.
void validate_run_config(const RunConfig& cfg, Command command);

/// Loads a dataset described by `spec`, then resizes, pads and standardizes
/// it for the 32x32 network input. `keep_labels` false drops labels.
Dataset load_prepared(const DataSpec& spec, Domain domain, bool keep_labels);

}  // namespace adan
