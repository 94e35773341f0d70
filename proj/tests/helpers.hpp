// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "adrenaline/model.hpp"

namespace test_helpers {

using adrenaline::ad::Tensor;
using adrenaline::model::ModelConfig;

inline ModelConfig micro_config(adrenaline::model::Variant variant = adrenaline::model::Variant::adrenaline) {
  ModelConfig c;
  c.variant = variant;
  c.channels = 2;
  c.frames = 4;
  c.bins = 32;
  c.conv_filters = 4;
  c.pools = {2, 2, 2};
  c.hidden = 4;
  c.slots = 2;
  c.seld_hidden = 4;
  return c;
}

inline Tensor random_tensor(const adrenaline::ad::Shape& shape, std::mt19937_64& rng, double stddev = 1.0,
                            bool requires_grad = false) {
  std::normal_distribution<double> g(0.0, stddev);
  std::vector<double> v(adrenaline::ad::shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

inline void randomize(adrenaline::model::Model& m, std::uint64_t seed, double stddev = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, stddev);
  for (auto& p : m.parameters()) {
    for (auto& v : p.value.mutable_data()) v = g(rng);
  }
}

inline void zero_all(adrenaline::model::Model& m) {
  for (auto& p : m.parameters()) {
    for (auto& v : p.value.mutable_data()) v = 0.0;
  }
}

}  // namespace test_helpers
