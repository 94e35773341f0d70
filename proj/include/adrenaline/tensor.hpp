// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adrenaline/error.hpp"

namespace adrenaline::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t generation = 0;
  std::int64_t id = -1;  // -1 for leaves and constants

  void accumulate(std::span<const double> g);
  std::vector<double>& ensure_grad();
};

/// Handle to a reference-counted n-d array of doubles. Copies share storage,
/// mirroring how parameters flow through the tape; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  /// Rejects NaN/Inf and size mismatches.
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access. Only valid outside a recorded computation (parameter updates, test setup).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  std::int64_t node_id() const { return node_->id; }

  Tensor clone() const;
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations for one forward pass. Each
/// thread has its own tape; backward() consumes it.
class Tape {
 public:
  using Backward = std::function<void()>;

  std::int64_t record(const std::shared_ptr<Node>& out, Backward fn);
  void backward(const Tensor& loss);
  /// Vector-Jacobian product: seeds d(root) with `seed` instead of 1.
  void backward(const Tensor& root, std::span<const double> seed);
  void clear();
  std::size_t size() const { return entries_.size(); }
  std::uint64_t generation() const { return generation_; }

 private:
  struct Entry {
    std::shared_ptr<Node> out;
    Backward fn;
  };
  std::vector<Entry> entries_;
  std::uint64_t generation_ = 1;
};

Tape& tape();

/// Populate gradients of every requires-grad tensor reachable from a scalar loss.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates an output node; attaches it to the tape when any input requires grad.
std::shared_ptr<Node> make_output(const Shape& shape, std::initializer_list<const Tensor*> inputs);
std::shared_ptr<Node> make_output(const Shape& shape, std::span<const Tensor> inputs);
void attach(const std::shared_ptr<Node>& out, Tape::Backward fn);

// Discrete-decision fingerprint used by gradient checks to skip points whose
// finite-difference stencil crosses a relu/maxpool/clamp/selection boundary.
namespace kink {
void begin();
std::uint64_t end();
bool active();
void note(std::uint64_t decision);
}  // namespace kink

}  // namespace adrenaline::ad
