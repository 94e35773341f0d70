// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "adrenaline/tensor.hpp"

namespace adrenaline::ad {

inline constexpr double kAcosEps = 1e-7;
inline constexpr double kLogEps = 1e-12;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

enum class OpKind {
  add,
  sub,
  mul,
  div,
  sigmoid,
  tanh,
  relu,
  sin,
  cos,
  acos_clamped,
  log_clamped,
  exp,
  scale,
};

OpKind parse_op_kind(std::string_view name);
std::string_view op_kind_name(OpKind kind);
bool is_binary(OpKind kind);

/// Generic elementwise entry point. Binary kinds broadcast when one shape is a
/// suffix of the other; `scale` multiplies by `constant`.
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b = nullptr, double constant = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
/// arccos with input clamped to [-1, 1 - kAcosEps]; the derivative is
/// evaluated no closer than kAcosEps to either pole so it stays finite.
Tensor acos_clamped(const Tensor& a);
/// log(max(a, kLogEps)).
Tensor log_clamped(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);

/// [m x n] . [n x p]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched [B x m x n] . [B x n x p]
Tensor bmm(const Tensor& a, const Tensor& b);

/// 3x3, stride 1, zero padding 1. input [H x W x Cin] or [N x H x W x Cin];
/// kernels [Co x 3 x 3 x Cin]; bias [Co].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// Non-overlapping max pooling over the two spatial axes of [H x W x C] or
/// [N x H x W x C]. Remainders are truncated; ties route gradient to the first index.
Tensor maxpool2d(const Tensor& input, std::size_t pool_h, std::size_t pool_w);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::size_t updates = 0;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
  bool ready() const { return updates > 0; }
};

enum class NormMode { train, eval };

/// Per-channel normalisation over every axis except the last. In train mode
/// the batch statistics are used and, when `update_stats`, folded into `stats`
/// with running = momentum * running + (1 - momentum) * batch.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, NormMode mode,
                 bool update_stats = true);

/// Softmax over the last axis.
Tensor softmax(const Tensor& scores);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// narrow to one index and drop the axis.
Tensor select(const Tensor& a, std::size_t axis, std::size_t index);
/// Reverse the order of entries along an axis.
Tensor flip(const Tensor& a, std::size_t axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

namespace testing {
/// Negates the backward rule of `kind` while set; used to prove the gradient
/// checks are sensitive. Not thread-safe, tests only.
void inject_sign_flip(std::optional<OpKind> kind);
}  // namespace testing

}  // namespace adrenaline::ad
