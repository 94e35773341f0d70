// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "adrenaline/model.hpp"
#include "adrenaline/ops.hpp"

namespace adrenaline::loss {

using ad::Tensor;

/// unit_vector: arccos of the dot product of the two 3-D direction vectors.
/// literal: arccos(sin az^ sin az + cos az^ cos az cos(el - el^)), the printed
/// form with azimuth in the latitude role, kept for comparison.
enum class DoaForm { unit_vector, literal };

DoaForm parse_doa_form(const std::string& name);

inline constexpr std::size_t kMaxPermutationSlots = 6;

/// Element-wise angle between predicted and true directions (radians, same shapes).
Tensor doa_error(const Tensor& az_hat, const Tensor& el_hat, const Tensor& az, const Tensor& el,
                 DoaForm form = DoaForm::unit_vector);

/// Mean binary cross-entropy over every element.
Tensor activity_loss(const Tensor& gamma_hat, const Tensor& gamma);

/// (1/S) xi^T gamma averaged over frames; xi and gamma are [... x S].
Tensor masked_doa_loss(const Tensor& xi, const Tensor& gamma);

struct PermutedDoa {
  Tensor loss;  // averaged over frames
  /// permutation[n][j] = prediction slot matched to true slot j in frame n.
  std::vector<std::vector<std::size_t>> permutation;
};

/// Per-frame minimum of the masked DoA loss over all S! reorderings of the
/// prediction slots; ties go to the lexicographically smallest permutation.
/// Inputs are [... x S] and flattened into frames.
PermutedDoa permuted_doa_loss(const Tensor& az_hat, const Tensor& el_hat, const Tensor& az, const Tensor& el,
                              const Tensor& gamma, DoaForm form = DoaForm::unit_vector);

struct LossOptions {
  double lambda = 1.0;
  DoaForm form = DoaForm::unit_vector;
};

struct LossBreakdown {
  Tensor total;
  Tensor activity;
  Tensor doa;
  std::vector<std::vector<std::size_t>> permutation;
};

/// Targets are B x K x S tensors matching the output heads.
LossBreakdown sel_loss(const model::SelOutput& output, const Tensor& activity, const Tensor& azimuth,
                       const Tensor& elevation, const LossOptions& options = {});

/// Plain great-circle angle in [0, pi] without the training clamp.
double angular_distance(double az_a, double el_a, double az_b, double el_b);

}  // namespace adrenaline::loss
