#pragma once

// Per-sample staged inference with entropy gating: exit e accepts when the
// entropy of its softmax is <= T_e; the final exit accepts unconditionally.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adan/data.hpp"
#include "adan/network.hpp"

namespace adan {

struct ThresholdPolicy {
  std::vector<double> thresholds;  // one per early exit

  /// The same threshold for every early exit.
  static ThresholdPolicy uniform(double t, std::size_t exit_count);

  /// A single value is replicated; otherwise one value per early exit.
  static ThresholdPolicy from_values(const std::vector<double>& values, std::size_t exit_count);

  void validate(std::size_t exit_count) const;
};

inline const std::vector<double>& default_sweep_thresholds() {
  static const std::vector<double> t{0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.75, 1.5};
  return t;
}

struct RouteDecision {
  int predicted = 0;
  std::size_t exit = 0;          // 1-based
  std::vector<double> entropies; // one per gated exit that was evaluated
};

/// Entropy (nats) of softmax(logits) for a single row, evaluated in double
/// and clamped to [0, ln C].
double gate_entropy(const Tensor& logits);

RouteDecision route_sample(const Network& net, const Tensor& image, const ThresholdPolicy& policy,
                           OpCounts* counts = nullptr);

/// Final-exit prediction through the staged path, no gating.
int predict_final(const Network& net, const Tensor& image);

struct SampleRecord {
  RouteDecision decision;
  std::optional<bool> correct;
  double seconds = 0.0;
};

struct RoutingReport {
  std::vector<SampleRecord> samples;
  std::vector<double> exit_ratios;  // one per exit, summing to 1
  std::optional<double> accuracy;
  double total_seconds = 0.0;
  double seconds_per_sample = 0.0;
};

RoutingReport route_batch(const Network& net, const Dataset& data, const ThresholdPolicy& policy);

struct SpeedupReport {
  double routed_ms_per_sample = 0.0;
  double baseline_ms_per_sample = 0.0;
  double speedup = 0.0;
  std::optional<std::string> warning;
};

/// Warm-up pass, then `repeats` interleaved baseline/routed passes over the
/// whole set; per-sample time is the median of (pass time / N).
SpeedupReport benchmark_speedup(const Network& net, const Dataset& data, const ThresholdPolicy& policy, int repeats = 5);

struct SweepRow {
  std::optional<double> threshold;  // empty for the baseline row
  double accuracy = 0.0;
  std::vector<double> exit_ratios;
  double time_ms_per_sample = 0.0;
  double speedup = 1.0;
};

struct SweepReport {
  SweepRow baseline;
  std::vector<SweepRow> rows;
  std::optional<std::string> warning;
  std::uint64_t seed = 0;
};

SweepReport sweep_thresholds(const Network& net, const Dataset& data, const std::vector<double>& thresholds,
                             int repeats = 5);

/// Header: threshold,accuracy,exit1_ratio,...,exitm_ratio,time_ms_per_sample,speedup
/// The baseline row comes first with threshold "baseline".
std::string sweep_to_csv(const SweepReport& report);
SweepReport sweep_from_csv(const std::string& csv);
std::string sweep_to_json(const SweepReport& report);

}  // namespace adan
