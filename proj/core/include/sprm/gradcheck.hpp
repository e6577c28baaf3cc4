#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sprm/tensor.hpp"

namespace sprm {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Entries probed per input; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// Each input's error scale is at least this fraction of the largest
  /// numeric gradient over all inputs, so an input whose true gradient
  /// vanishes (a bias feeding a normalization) is not judged by the ratio of
  /// two rounding residues.
  double relative_floor = 1e-3;
};

struct GradCheckResult {
  /// max |analytic - numeric| / max(max |numeric|, relative_floor * G, 1e-10)
  /// per input, G the largest |numeric| over all inputs; maximised over inputs.
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t probed = 0;
};

/// Compares reverse-mode gradients of sum(R * fn()) with central differences,
/// R a fixed random projection. `wrt` are handles whose storage `fn` reads;
/// each must have requires_grad on. Values are perturbed in place and restored.
GradCheckResult check_gradients(const std::function<NdArray()>& fn, const std::vector<NdArray>& wrt,
                                const GradCheckOptions& options = {});

}  // namespace sprm
