// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace adrenaline::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void Node::accumulate(std::span<const double> g) {
  auto& dst = ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() : node_(std::make_shared<Node>()) { node_->data.assign(1, 0.0); }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data.assign(shape_numel(shape), value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ShapeError("tensor: non-finite value at construction");
  }
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::clone() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->grad = node_->grad;
  n->requires_grad = node_->requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(std::move(n));
}

namespace {
thread_local Tape t_tape;
thread_local bool t_grad_enabled = true;

struct KinkState {
  bool on = false;
  std::uint64_t hash = 1469598103934665603ULL;
};
thread_local KinkState t_kink;
}  // namespace

Tape& tape() { return t_tape; }
bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::int64_t Tape::record(const std::shared_ptr<Node>& out, Backward fn) {
  out->generation = generation_;
  out->id = static_cast<std::int64_t>(entries_.size());
  entries_.push_back({out, std::move(fn)});
  return out->id;
}

void Tape::clear() {
  entries_.clear();
  ++generation_;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1 || loss.rank() > 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& root, std::span<const double> seed) {
  if (seed.size() != root.numel()) throw ShapeError("backward: seed size does not match root");
  const auto& node = root.node();
  if (node->id < 0) {
    // A leaf root has nothing to propagate.
    if (node->requires_grad) node->accumulate(seed);
    return;
  }
  if (node->generation != generation_) {
    throw std::logic_error("backward: tape already consumed; re-run the forward pass");
  }
  node->accumulate(seed);
  for (auto i = node->id; i >= 0; --i) {
    auto& e = entries_[static_cast<std::size_t>(i)];
    if (!e.out->grad.empty()) e.fn();
  }
  clear();
}

void backward(const Tensor& loss) { t_tape.backward(loss); }

namespace {
bool any_requires(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}
}  // namespace

std::shared_ptr<Node> make_output(const Shape& shape, std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data.assign(shape_numel(shape), 0.0);
  n->requires_grad = t_grad_enabled && any_requires(inputs);
  return n;
}

std::shared_ptr<Node> make_output(const Shape& shape, std::span<const Tensor> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data.assign(shape_numel(shape), 0.0);
  n->requires_grad =
      t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  return n;
}

void attach(const std::shared_ptr<Node>& out, Tape::Backward fn) {
  if (out->requires_grad) t_tape.record(out, std::move(fn));
}

namespace kink {
void begin() { t_kink = KinkState{true, 1469598103934665603ULL}; }
std::uint64_t end() {
  t_kink.on = false;
  return t_kink.hash;
}
bool active() { return t_kink.on; }
void note(std::uint64_t decision) {
  // FNV-1a over the 8 bytes of each decision
  for (int b = 0; b < 8; ++b) {
    t_kink.hash ^= (decision >> (8 * b)) & 0xffU;
    t_kink.hash *= 1099511628211ULL;
  }
}
}  // namespace kink

}  // namespace adrenaline::ad
