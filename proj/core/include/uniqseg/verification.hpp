// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace uniqseg::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Individual checks (used by both the suites below and the acceptance
// criteria, which time them separately).
CheckResult check_focal_oracle();
CheckResult check_dice_oracle();
CheckResult check_matching_oracle();
CheckResult check_ap_oracle();
CheckResult check_identity_collapse();
CheckResult check_memory_fuzz();
CheckResult check_balanced_bound();
CheckResult check_detach_and_batch_equivalence();

/// Gradient battery: finite-difference checks for all seven loss names on
/// the downsized double-precision model at 1e-4 relative tolerance.
std::vector<CheckResult> grads_suite();

/// Oracle battery: focal/dice scalar-formula oracles (1000 random inputs at
/// 1e-10 plus the pinned hand values), Hungarian vs exhaustive enumeration,
/// AP greedy vs exhaustive matching, and the identity-collapse equality.
std::vector<CheckResult> oracles_suite();

/// Memory battery: fuzzed FIFO/capacity/exclusion invariants, sampling
/// bounds, detach semantics and the memory-vs-brute-force equivalence.
std::vector<CheckResult> memory_suite();

/// Runs one of "grads", "oracles", "memory" or "all".
std::vector<CheckResult> run_suite(const std::string& name);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace uniqseg::verify
