#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace adan {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // worst observed error
  double tolerance = 0.0;
  std::string detail;
};

struct SelfcheckOptions {
  int points = 10;
  std::uint64_t seed = 7;
  bool corrupt_conv_gradient = false;  // fault injection for testing the harness
};

/// Finite-difference checks (64-bit) of every layer primitive, the logit
/// gradient of cross-entropy, jmmd_linear and one small two-exit network.
std::vector<CheckResult> gradient_checks(const SelfcheckOptions& opt);

/// mmd_quadratic against an explicit double loop; paired cancellation of
/// jmmd_linear.
std::vector<CheckResult> mmd_checks(const SelfcheckOptions& opt);

/// Staged vs full forward, gating extremes and single execution of every
/// backbone layer per routed sample, on a randomly initialized LeNet.
std::vector<CheckResult> routing_checks(const SelfcheckOptions& opt);

/// Every compiled SIMD kernel table against the scalar reference.
std::vector<CheckResult> simd_checks(const SelfcheckOptions& opt);

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt);

void print_check_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace adan
