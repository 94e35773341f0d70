// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "adrenaline/tensor.hpp"

namespace adrenaline::ad {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Seed of the random projection that turns a tensor output into a scalar.
  std::uint64_t seed = 17;
  /// Upper bound on probed entries per input; 0 probes everything.
  std::size_t max_entries_per_input = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencil crossed a kink
};

/// Compares backward() against central finite differences.
///
/// `fn` is re-evaluated for every perturbation; its output is contracted with a
/// fixed random weight tensor so that every output entry contributes. Entries
/// whose +/- step evaluations change any discrete decision (relu sign,
/// pooling argmax, clamp activity, permutation choice) are skipped.
GradCheckResult check_gradients(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                const GradCheckOptions& options = {});

}  // namespace adrenaline::ad
