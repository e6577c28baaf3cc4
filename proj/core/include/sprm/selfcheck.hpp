#pragma once

#include <string>
#include <vector>

namespace sprm {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfcheckOptions {
  /// Test hook: perturbs the SSM convolution kernel before it is compared
  /// with the recurrence, so the equivalence check must fail.
  bool corrupt_kernel = false;
};

/// Embedded invariant suite: SSM recurrence vs kernel, selective scan vs the
/// LTI recurrence, sampling round trips and pad inertness, finite-difference
/// gradient spot checks, the causal prefix property and a metrics oracle.
std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options = {});

}  // namespace sprm
