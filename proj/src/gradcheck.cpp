// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace adrenaline::ad {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Tensor()>& fn, const std::vector<double>& weights) {
  NoGradGuard guard;
  kink::begin();
  Tensor out = fn();
  const auto sig = kink::end();
  double total = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) total += weights[i] * out[i];
  return {total, sig};
}

}  // namespace

GradCheckResult check_gradients(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  tape().clear();

  kink::begin();
  Tensor out = fn();
  const auto base_sig = kink::end();

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> weights(out.numel());
  for (auto& w : weights) w = unit(rng);
  tape().backward(out, weights);

  GradCheckResult result;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::size_t stride = 1;
    if (options.max_entries_per_input > 0 && t.numel() > options.max_entries_per_input) {
      stride = (t.numel() + options.max_entries_per_input - 1) / options.max_entries_per_input;
    }
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); i += stride) {
      const double original = values[i];
      values[i] = original + options.step;
      const auto plus = evaluate(fn, weights);
      values[i] = original - options.step;
      const auto minus = evaluate(fn, weights);
      values[i] = original;
      if (plus.signature != base_sig || minus.signature != base_sig) {
        ++result.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), options.floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(numeric - analytic[i]) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace adrenaline::ad
