#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "adan/config.hpp"
#include "adan/selfcheck.hpp"

namespace adan {

// Exit codes: 0 success, 1 runtime or check failure, 2 invalid configuration.

/// Trains one network per seed. Writes checkpoint_seed{N}.adan and
/// history_seed{N}.jsonl per seed plus summary.json (mean and sample std of
/// the final-exit evaluation accuracy) into the output directory. Seeds run
/// in ADAN_THREADS worker threads unless the config is deterministic.
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Final-exit and per-exit accuracy on the eval set; with `thresholds`, the
/// routed accuracy and exit ratios for each. Writes eval.json.
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::vector<double>& thresholds,
             std::ostream& out, std::ostream& err);

/// Threshold sweep on the eval set. Writes sweep.csv and sweep.json.
int cmd_sweep(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& out, std::ostream& err);

int cmd_selfcheck(const SelfcheckOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace adan
