// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace adrenaline::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;  // the quantity compared against `tolerance`
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;

  nlohmann::ordered_json to_json() const;
};

/// Central differences against backward() for every differentiable op.
CheckResult op_gradients(std::size_t trials = 20, std::uint64_t seed = 1);
/// Full adrenaline forward + SEL loss on the micro config (K=4, L=32, C=2, D_h=4, S=2).
CheckResult end_to_end_gradient(std::uint64_t seed = 2);
/// Hungarian vs. brute force over all 24 permutations of random 4x4 matrices, bit-exact.
CheckResult hungarian_oracle(std::size_t cases = 1000, std::uint64_t seed = 3);
/// Permutation loss vs. Hungarian on the masked cost matrix (S = 4).
CheckResult permutation_loss_oracle(std::size_t cases = 1000, std::uint64_t seed = 4);
/// Great-circle error vs. an independent unit-vector computation, plus identity and antipodal pairs.
CheckResult doa_oracle(std::size_t pairs = 10000, std::uint64_t seed = 5);
/// Attention rows sum to one; zero decoder state gives exactly uniform weights.
CheckResult attention_rows(std::size_t passes = 100, std::uint64_t seed = 6);
/// Shapes of a single forward pass at the full model dimensions.
CheckResult paper_shapes();
/// Exact small cases and the complement identity.
CheckResult mann_whitney_oracle(std::size_t cases = 1000, std::uint64_t seed = 7);

/// Everything above, in a fixed order.
std::vector<CheckResult> run_all();

}  // namespace adrenaline::verify
