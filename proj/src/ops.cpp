// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace adrenaline::ad {

namespace {

std::optional<OpKind> g_flipped;

double sign_for(OpKind kind) { return g_flipped && *g_flipped == kind ? -1.0 : 1.0; }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Sum a gradient of the broadcast shape down to a suffix shape of `n` elements.
void reduce_into(Node& dst, const std::vector<double>& g, double factor) {
  auto& d = dst.ensure_grad();
  const std::size_t n = d.size();
  for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += factor * g[i];
}

std::size_t outer_size(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis; ++i) n *= s[i];
  return n;
}

std::size_t inner_size(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op_kind_name(kind)) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                     shape_str(b.shape()));
  }
  const Shape& out_shape = a_big ? a.shape() : b.shape();
  auto out = make_output(out_shape, {&a, &b});
  const auto& x = a.data();
  const auto& y = b.data();
  const std::size_t na = x.size(), nb = y.size(), n = out->data.size();
  auto& z = out->data;
  switch (kind) {
    case OpKind::add:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i % na] + y[i % nb];
      break;
    case OpKind::sub:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i % na] - y[i % nb];
      break;
    case OpKind::mul:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i % na] * y[i % nb];
      break;
    case OpKind::div:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i % na] / y[i % nb];
      break;
    default:
      throw std::invalid_argument("binary: not a binary kind");
  }
  auto an = a.node(), bn = b.node();
  Node* o = out.get();
  attach(out, [kind, an, bn, o] {
    const double s = sign_for(kind);
    const auto& g = o->grad;
    const std::size_t n = g.size(), na = an->data.size(), nb = bn->data.size();
    std::vector<double> ga, gb;
    if (an->requires_grad) ga.assign(n, 0.0);
    if (bn->requires_grad) gb.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double xa = an->data[i % na], xb = bn->data[i % nb];
      switch (kind) {
        case OpKind::add:
          if (!ga.empty()) ga[i] = g[i];
          if (!gb.empty()) gb[i] = g[i];
          break;
        case OpKind::sub:
          if (!ga.empty()) ga[i] = g[i];
          if (!gb.empty()) gb[i] = -g[i];
          break;
        case OpKind::mul:
          if (!ga.empty()) ga[i] = g[i] * xb;
          if (!gb.empty()) gb[i] = g[i] * xa;
          break;
        default:  // div
          if (!ga.empty()) ga[i] = g[i] / xb;
          if (!gb.empty()) gb[i] = -g[i] * xa / (xb * xb);
          break;
      }
    }
    if (!ga.empty()) reduce_into(*an, ga, s);
    if (!gb.empty()) reduce_into(*bn, gb, s);
  });
  return Tensor(out);
}

Tensor unary(OpKind kind, const Tensor& a, double c) {
  auto out = make_output(a.shape(), {&a});
  const auto& x = a.data();
  const std::size_t n = x.size();
  auto& y = out->data;
  std::vector<double> local(out->requires_grad ? n : 0);
  const bool want = !local.empty();
  const bool probing = kink::active();
  std::uint64_t pattern = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    double d = 0.0;
    switch (kind) {
      case OpKind::sigmoid: {
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        y[i] = s;
        d = s * (1.0 - s);
        break;
      }
      case OpKind::tanh: {
        const double t = std::tanh(v);
        y[i] = t;
        d = 1.0 - t * t;
        break;
      }
      case OpKind::relu:
        y[i] = v > 0 ? v : 0.0;
        d = v > 0 ? 1.0 : 0.0;
        if (probing) pattern = pattern * 31 + (v > 0 ? 1 : 2);
        break;
      case OpKind::sin:
        y[i] = std::sin(v);
        d = std::cos(v);
        break;
      case OpKind::cos:
        y[i] = std::cos(v);
        d = -std::sin(v);
        break;
      case OpKind::acos_clamped: {
        const bool clamped = v > 1.0 - kAcosEps || v < -1.0;
        const double xc = std::clamp(v, -1.0, 1.0 - kAcosEps);
        y[i] = std::acos(xc);
        const double xd = std::max(xc, -1.0 + kAcosEps);
        d = clamped ? 0.0 : -1.0 / std::sqrt(1.0 - xd * xd);
        if (probing) pattern = pattern * 31 + (clamped ? 1 : 2);
        break;
      }
      case OpKind::log_clamped: {
        const bool clamped = v < kLogEps;
        y[i] = std::log(clamped ? kLogEps : v);
        d = clamped ? 0.0 : 1.0 / v;
        if (probing) pattern = pattern * 31 + (clamped ? 1 : 2);
        break;
      }
      case OpKind::exp:
        y[i] = std::exp(v);
        d = y[i];
        break;
      case OpKind::scale:
        y[i] = c * v;
        d = c;
        break;
      default:
        throw std::invalid_argument("unary: not a unary kind");
    }
    if (want) local[i] = d;
  }
  if (probing) kink::note(pattern);
  auto an = a.node();
  Node* o = out.get();
  attach(out, [kind, an, o, local = std::move(local)] {
    if (!an->requires_grad) return;
    const double s = sign_for(kind);
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * o->grad[i] * local[i];
  });
  return Tensor(out);
}

}  // namespace

OpKind parse_op_kind(std::string_view name) {
  static constexpr std::pair<std::string_view, OpKind> kTable[] = {
      {"add", OpKind::add},       {"sub", OpKind::sub},
      {"mul", OpKind::mul},       {"div", OpKind::div},
      {"sigmoid", OpKind::sigmoid}, {"tanh", OpKind::tanh},
      {"relu", OpKind::relu},     {"sin", OpKind::sin},
      {"cos", OpKind::cos},       {"acos_clamped", OpKind::acos_clamped},
      {"log_clamped", OpKind::log_clamped}, {"exp", OpKind::exp},
      {"scale", OpKind::scale},
  };
  for (const auto& [n, k] : kTable) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown elementwise kind '" + std::string(name) + "'");
}

std::string_view op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::sin: return "sin";
    case OpKind::cos: return "cos";
    case OpKind::acos_clamped: return "acos_clamped";
    case OpKind::log_clamped: return "log_clamped";
    case OpKind::exp: return "exp";
    case OpKind::scale: return "scale";
  }
  return "?";
}

bool is_binary(OpKind kind) {
  return kind == OpKind::add || kind == OpKind::sub || kind == OpKind::mul || kind == OpKind::div;
}

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b, double constant) {
  if (is_binary(kind)) {
    if (b == nullptr) throw std::invalid_argument(std::string(op_kind_name(kind)) + ": missing second operand");
    return binary(kind, a, *b);
  }
  return unary(kind, a, constant);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(OpKind::div, a, b); }
Tensor sigmoid(const Tensor& a) { return unary(OpKind::sigmoid, a, 1.0); }
Tensor tanh(const Tensor& a) { return unary(OpKind::tanh, a, 1.0); }
Tensor relu(const Tensor& a) { return unary(OpKind::relu, a, 1.0); }
Tensor sin(const Tensor& a) { return unary(OpKind::sin, a, 1.0); }
Tensor cos(const Tensor& a) { return unary(OpKind::cos, a, 1.0); }
Tensor acos_clamped(const Tensor& a) { return unary(OpKind::acos_clamped, a, 1.0); }
Tensor log_clamped(const Tensor& a) { return unary(OpKind::log_clamped, a, 1.0); }
Tensor exp(const Tensor& a) { return unary(OpKind::exp, a, 1.0); }
Tensor scale(const Tensor& a, double c) { return unary(OpKind::scale, a, c); }
Tensor add_scalar(const Tensor& a, double c) { return binary(OpKind::add, a, Tensor::scalar(c)); }
Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

namespace {

// c[m x p] += a[m x n] . b[n x p]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    const double* ai = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

// ga[m x n] += g[m x p] . b^T
void gemm_nt(const double* g, const double* b, double* ga, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double* bk = b + k * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) acc += gi[j] * bk[j];
      ga[i * n + k] += acc;
    }
  }
}

// gb[n x p] += a^T . g[m x p]
void gemm_tn(const double* a, const double* g, double* gb, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      double* gbk = gb + k * p;
      for (std::size_t j = 0; j < p; ++j) gbk[j] += aik * gi[j];
    }
  }
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, std::size_t batch, std::size_t m, std::size_t n,
                      std::size_t p, const Shape& out_shape) {
  auto out = make_output(out_shape, {&a, &b});
  for (std::size_t q = 0; q < batch; ++q) {
    gemm_nn(a.data().data() + q * m * n, b.data().data() + q * n * p, out->data.data() + q * m * p, m, n, p);
  }
  auto an = a.node(), bn = b.node();
  Node* o = out.get();
  attach(out, [an, bn, o, batch, m, n, p] {
    const double s = sign_for(OpKind::mul);
    std::vector<double> g = o->grad;
    if (s < 0) {
      for (auto& v : g) v = -v;
    }
    for (std::size_t q = 0; q < batch; ++q) {
      if (an->requires_grad) {
        gemm_nt(g.data() + q * m * p, bn->data.data() + q * n * p, an->ensure_grad().data() + q * m * n, m, n, p);
      }
      if (bn->requires_grad) {
        gemm_tn(an->data.data() + q * m * n, g.data() + q * m * p, bn->ensure_grad().data() + q * n * p, m, n, p);
      }
    }
  });
  return Tensor(out);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  return batched_matmul(a, b, 1, a.dim(0), a.dim(1), b.dim(1), {a.dim(0), b.dim(1)});
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  return batched_matmul(a, b, a.dim(0), a.dim(1), a.dim(2), b.dim(2), {a.dim(0), a.dim(1), b.dim(2)});
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) throw ShapeError("conv2d: input must be [H x W x C] or [N x H x W x C]");
  const std::size_t N = batched ? input.dim(0) : 1;
  const std::size_t H = input.dim(batched ? 1 : 0), W = input.dim(batched ? 2 : 1), Ci = input.dim(batched ? 3 : 2);
  if (kernels.rank() != 4 || kernels.dim(1) != 3 || kernels.dim(2) != 3) {
    throw ShapeError("conv2d: kernels must be [Co x 3 x 3 x Cin], got " + shape_str(kernels.shape()));
  }
  if (kernels.dim(3) != Ci) {
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(Ci) + ", kernels expect " +
                     std::to_string(kernels.dim(3)));
  }
  const std::size_t Co = kernels.dim(0);
  if (bias.numel() != Co) throw ShapeError("conv2d: bias must have " + std::to_string(Co) + " entries");

  Shape out_shape = batched ? Shape{N, H, W, Co} : Shape{H, W, Co};
  auto out = make_output(out_shape, {&input, &kernels, &bias});
  const double* x = input.data().data();
  const double* k = kernels.data().data();
  const double* bv = bias.data().data();
  double* y = out->data.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        double* yo = y + ((n * H + h) * W + w) * Co;
        for (std::size_t co = 0; co < Co; ++co) yo[co] = bv[co];
        for (std::size_t dh = 0; dh < 3; ++dh) {
          if (h + dh < 1 || h + dh - 1 >= H) continue;
          for (std::size_t dw = 0; dw < 3; ++dw) {
            if (w + dw < 1 || w + dw - 1 >= W) continue;
            const double* xi = x + ((n * H + h + dh - 1) * W + (w + dw - 1)) * Ci;
            for (std::size_t co = 0; co < Co; ++co) {
              const double* kc = k + ((co * 3 + dh) * 3 + dw) * Ci;
              double acc = 0.0;
              for (std::size_t ci = 0; ci < Ci; ++ci) acc += xi[ci] * kc[ci];
              yo[co] += acc;
            }
          }
        }
      }
    }
  }
  auto in = input.node(), kn = kernels.node(), bn = bias.node();
  Node* o = out.get();
  attach(out, [in, kn, bn, o, N, H, W, Ci, Co] {
    const double s = sign_for(OpKind::mul);
    const double* g = o->grad.data();
    const double* x = in->data.data();
    const double* k = kn->data.data();
    double* gx = in->requires_grad ? in->ensure_grad().data() : nullptr;
    double* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
    double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          const double* go = g + ((n * H + h) * W + w) * Co;
          if (gb) {
            for (std::size_t co = 0; co < Co; ++co) gb[co] += s * go[co];
          }
          for (std::size_t dh = 0; dh < 3; ++dh) {
            if (h + dh < 1 || h + dh - 1 >= H) continue;
            for (std::size_t dw = 0; dw < 3; ++dw) {
              if (w + dw < 1 || w + dw - 1 >= W) continue;
              const std::size_t xoff = ((n * H + h + dh - 1) * W + (w + dw - 1)) * Ci;
              for (std::size_t co = 0; co < Co; ++co) {
                const double gv = s * go[co];
                if (gv == 0.0) continue;
                const std::size_t koff = ((co * 3 + dh) * 3 + dw) * Ci;
                if (gx) {
                  for (std::size_t ci = 0; ci < Ci; ++ci) gx[xoff + ci] += gv * k[koff + ci];
                }
                if (gk) {
                  for (std::size_t ci = 0; ci < Ci; ++ci) gk[koff + ci] += gv * x[xoff + ci];
                }
              }
            }
          }
        }
      }
    }
  });
  return Tensor(out);
}

Tensor maxpool2d(const Tensor& input, std::size_t pool_h, std::size_t pool_w) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) throw ShapeError("maxpool2d: input must be [H x W x C] or [N x H x W x C]");
  const std::size_t N = batched ? input.dim(0) : 1;
  const std::size_t H = input.dim(batched ? 1 : 0), W = input.dim(batched ? 2 : 1), C = input.dim(batched ? 3 : 2);
  if (pool_h == 0 || pool_w == 0 || pool_h > H || pool_w > W) {
    throw ShapeError("maxpool2d: pool " + std::to_string(pool_h) + "x" + std::to_string(pool_w) +
                     " exceeds input " + shape_str(input.shape()));
  }
  const std::size_t Ho = H / pool_h, Wo = W / pool_w;
  Shape out_shape = batched ? Shape{N, Ho, Wo, C} : Shape{Ho, Wo, C};
  auto out = make_output(out_shape, {&input});
  std::vector<std::size_t> argmax(out->data.size());
  const double* x = input.data().data();
  const bool probing = kink::active();
  std::uint64_t pattern = 0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = ((n * H + ho * pool_h) * W + wo * pool_w) * C + c;
          for (std::size_t ph = 0; ph < pool_h; ++ph) {
            for (std::size_t pw = 0; pw < pool_w; ++pw) {
              const std::size_t idx = ((n * H + ho * pool_h + ph) * W + wo * pool_w + pw) * C + c;
              if (x[idx] > x[best]) best = idx;
            }
          }
          const std::size_t o = ((n * Ho + ho) * Wo + wo) * C + c;
          out->data[o] = x[best];
          argmax[o] = best;
          if (probing) pattern = pattern * 131 + best;
        }
      }
    }
  }
  if (probing) kink::note(pattern);
  auto in = input.node();
  Node* o = out.get();
  attach(out, [in, o, argmax = std::move(argmax)] {
    if (!in->requires_grad) return;
    auto& gx = in->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += o->grad[i];
  });
  return Tensor(out);
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, NormMode mode,
                 bool update_stats) {
  if (input.rank() == 0) throw ShapeError("batchnorm: scalar input");
  const std::size_t C = input.shape().back();
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("batchnorm: gamma/beta must have C entries");
  if (stats.running_mean.size() != C) throw ShapeError("batchnorm: running statistics sized for another layer");
  const std::size_t M = input.numel() / C;
  if (mode == NormMode::eval && !stats.ready()) {
    throw std::logic_error("batchnorm: eval mode requested before any train-mode statistics update");
  }

  std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
  const double* x = input.data().data();
  if (mode == NormMode::train) {
    std::vector<double> var(C, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t c = 0; c < C; ++c) mu[c] += x[i * C + c];
    }
    for (auto& m : mu) m /= static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[i * C + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      var[c] /= static_cast<double>(M);
      inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
    }
    if (update_stats) {
      const double unbias = M > 1 ? static_cast<double>(M) / static_cast<double>(M - 1) : 1.0;
      for (std::size_t c = 0; c < C; ++c) {
        stats.running_mean[c] = kBatchNormMomentum * stats.running_mean[c] + (1.0 - kBatchNormMomentum) * mu[c];
        stats.running_var[c] =
            kBatchNormMomentum * stats.running_var[c] + (1.0 - kBatchNormMomentum) * var[c] * unbias;
      }
      ++stats.updates;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + kBatchNormEps);
    }
  }

  auto out = make_output(input.shape(), {&input, &gamma, &beta});
  std::vector<double> xhat(input.numel());
  const double* gm = gamma.data().data();
  const double* bt = beta.data().data();
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const double xh = (x[i * C + c] - mu[c]) * inv_std[c];
      xhat[i * C + c] = xh;
      out->data[i * C + c] = gm[c] * xh + bt[c];
    }
  }
  auto in = input.node(), gn = gamma.node(), bn = beta.node();
  Node* o = out.get();
  const bool train = mode == NormMode::train;
  attach(out, [in, gn, bn, o, xhat = std::move(xhat), inv_std = std::move(inv_std), C, M, train] {
    const double* g = o->grad.data();
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        sum_g[c] += g[i * C + c];
        sum_gx[c] += g[i * C + c] * xhat[i * C + c];
      }
    }
    if (gn->requires_grad) {
      auto& gg = gn->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
    }
    if (!in->requires_grad) return;
    auto& gx = in->ensure_grad();
    const double* gm = gn->data.data();
    const double inv_m = 1.0 / static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const double dxh = g[i * C + c] * gm[c];
        if (train) {
          gx[i * C + c] +=
              inv_std[c] * (dxh - inv_m * gm[c] * sum_g[c] - inv_m * gm[c] * xhat[i * C + c] * sum_gx[c]);
        } else {
          gx[i * C + c] += dxh * inv_std[c];
        }
      }
    }
  });
  return Tensor(out);
}

Tensor softmax(const Tensor& scores) {
  if (scores.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t n = scores.shape().back();
  const std::size_t rows = scores.numel() / n;
  auto out = make_output(scores.shape(), {&scores});
  const double* x = scores.data().data();
  double* y = out->data.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      total += yr[i];
    }
    for (std::size_t i = 0; i < n; ++i) yr[i] /= total;
  }
  auto in = scores.node();
  Node* o = out.get();
  attach(out, [in, o, n, rows] {
    if (!in->requires_grad) return;
    auto& gx = in->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = o->data.data() + r * n;
      const double* gr = o->grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yr[i] * (gr[i] - dot);
    }
  });
  return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: mismatched parts " + shape_str(first) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = outer_size(first, axis), inner = inner_size(first, axis);
  const std::size_t row = out_shape[axis] * inner;
  auto out = make_output(out_shape, std::span<const Tensor>(parts));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len, len, out->data.data() + o * row + offset);
    }
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  Node* on = out.get();
  attach(out, [nodes = std::move(nodes), offsets = std::move(offsets), on, outer, row] {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k]->requires_grad) continue;
      auto& g = nodes[k]->ensure_grad();
      const std::size_t len = g.size() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = on->grad.data() + o * row + offsets[k];
        double* dst = g.data() + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
  return Tensor(out);
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto out = make_output(shape, {&a});
  out->data = a.node()->data;
  auto in = a.node();
  Node* o = out.get();
  attach(out, [in, o] {
    if (in->requires_grad) in->accumulate(o->grad);
  });
  return Tensor(out);
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("stack: no parts");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    if (axis > p.rank()) throw ShapeError("stack: axis out of range");
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, axis);
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.dim(axis) || length == 0) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const std::size_t outer = outer_size(a.shape(), axis), inner = inner_size(a.shape(), axis);
  const std::size_t src_row = a.dim(axis) * inner, len = length * inner, off = start * inner;
  auto out = make_output(out_shape, {&a});
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * src_row + off, len, out->data.data() + o * len);
  }
  auto in = a.node();
  Node* on = out.get();
  attach(out, [in, on, outer, src_row, len, off] {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < len; ++i) g[o * src_row + off + i] += on->grad[o * len + i];
    }
  });
  return Tensor(out);
}

Tensor select(const Tensor& a, std::size_t axis, std::size_t index) {
  Tensor part = narrow(a, axis, index, 1);
  Shape s = a.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(part, s);
}

Tensor flip(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("flip: axis out of range");
  const std::size_t outer = outer_size(a.shape(), axis), inner = inner_size(a.shape(), axis), n = a.dim(axis);
  auto out = make_output(a.shape(), {&a});
  auto src_index = [=](std::size_t i) {
    const std::size_t o = i / (n * inner), r = i % (n * inner);
    const std::size_t k = r / inner, j = r % inner;
    return (o * n + (n - 1 - k)) * inner + j;
  };
  (void)outer;
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a.data()[src_index(i)];
  auto in = a.node();
  Node* on = out.get();
  attach(out, [in, on, src_index] {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) g[src_index(i)] += on->grad[i];
  });
  return Tensor(out);
}

Tensor sum(const Tensor& a) {
  auto out = make_output({}, {&a});
  double total = 0.0;
  for (double v : a.data()) total += v;
  out->data[0] = total;
  auto in = a.node();
  Node* o = out.get();
  attach(out, [in, o] {
    if (!in->requires_grad) return;
    const double g = o->grad[0] * sign_for(OpKind::add);
    for (auto& v : in->ensure_grad()) v += g;
  });
  return Tensor(out);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

namespace testing {
void inject_sign_flip(std::optional<OpKind> kind) { g_flipped = kind; }
}  // namespace testing

}  // namespace adrenaline::ad
