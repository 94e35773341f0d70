// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adrenaline/error.hpp"

namespace adrenaline::loss {

using namespace adrenaline::ad;

DoaForm parse_doa_form(const std::string& name) {
  if (name == "unit-vector") return DoaForm::unit_vector;
  if (name == "literal") return DoaForm::literal;
  throw ConfigError("unknown DoA error form '" + name + "' (unit-vector, literal)");
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::size_t slots_of(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("loss: scalar where [... x S] was expected");
  return t.shape().back();
}

// Constant 0/1 matrices that spread an N x S tensor to N x S*S, entry
// (i, j) at column i*S + j carrying row i (pred) or column j (true).
Tensor spread(std::size_t S, bool by_row) {
  std::vector<double> m(S * S * S, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) m[(by_row ? i : j) * S * S + i * S + j] = 1.0;
  }
  return Tensor::from({S, S * S}, std::move(m));
}

}  // namespace

Tensor doa_error(const Tensor& az_hat, const Tensor& el_hat, const Tensor& az, const Tensor& el, DoaForm form) {
  require_same(az_hat, az, "doa_error");
  require_same(el_hat, el, "doa_error");
  require_same(az_hat, el_hat, "doa_error");
  Tensor dot;
  if (form == DoaForm::unit_vector) {
    // u . u^ = cos el cos el^ cos(az - az^) + sin el sin el^
    dot = cos(el) * cos(el_hat) * cos(az - az_hat) + sin(el) * sin(el_hat);
  } else {
    dot = sin(az_hat) * sin(az) + cos(az_hat) * cos(az) * cos(el - el_hat);
  }
  return acos_clamped(dot);
}

Tensor activity_loss(const Tensor& gamma_hat, const Tensor& gamma) {
  require_same(gamma_hat, gamma, "activity_loss");
  Tensor one_minus_hat = add_scalar(neg(gamma_hat), 1.0);
  Tensor one_minus = add_scalar(neg(gamma), 1.0);
  return neg(mean(gamma * log_clamped(gamma_hat) + one_minus * log_clamped(one_minus_hat)));
}

Tensor masked_doa_loss(const Tensor& xi, const Tensor& gamma) {
  require_same(xi, gamma, "masked_doa_loss");
  // mean over frames of (1/S) sum_s xi_s gamma_s == mean over every element
  return mean(xi * gamma);
}

PermutedDoa permuted_doa_loss(const Tensor& az_hat, const Tensor& el_hat, const Tensor& az, const Tensor& el,
                              const Tensor& gamma, DoaForm form) {
  require_same(az_hat, az, "permuted_doa_loss");
  require_same(el_hat, el, "permuted_doa_loss");
  require_same(az_hat, el_hat, "permuted_doa_loss");
  require_same(az_hat, gamma, "permuted_doa_loss");
  const std::size_t S = slots_of(az_hat);
  if (S > kMaxPermutationSlots) {
    throw ConfigError("permuted DoA loss: S = " + std::to_string(S) + " exceeds the enumeration limit of " +
                      std::to_string(kMaxPermutationSlots));
  }
  const std::size_t N = az_hat.numel() / S;
  const Tensor rows = spread(S, true), cols = spread(S, false);
  auto flat = [&](const Tensor& t) { return reshape(t, {N, S}); };
  // xi[n, i*S + j]: prediction i against truth j
  Tensor xi = doa_error(matmul(flat(az_hat), rows), matmul(flat(el_hat), rows), matmul(flat(az), cols),
                        matmul(flat(el), cols), form);

  PermutedDoa result;
  result.permutation.resize(N);
  std::vector<double> mask(N * S * S, 0.0);
  const auto x = xi.data();
  const auto g = gamma.data();
  std::vector<std::size_t> perm(S);
  for (std::size_t n = 0; n < N; ++n) {
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0.0;
    bool first = true;
    do {
      double cost = 0.0;
      for (std::size_t j = 0; j < S; ++j) cost += g[n * S + j] * x[n * S * S + perm[j] * S + j];
      if (first || cost < best) {
        best = cost;
        result.permutation[n] = perm;
        first = false;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::uint64_t code = 0;
    for (std::size_t j = 0; j < S; ++j) {
      const std::size_t i = result.permutation[n][j];
      mask[n * S * S + i * S + j] = g[n * S + j] / static_cast<double>(S);
      code = code * S + i;
    }
    if (kink::active()) kink::note(code);
  }
  result.loss = scale(sum(xi * Tensor::from({N, S * S}, std::move(mask))), 1.0 / static_cast<double>(N));
  return result;
}

LossBreakdown sel_loss(const model::SelOutput& output, const Tensor& activity, const Tensor& azimuth,
                       const Tensor& elevation, const LossOptions& options) {
  require_same(output.activity, activity, "sel_loss activity");
  require_same(output.azimuth, azimuth, "sel_loss azimuth");
  require_same(output.elevation, elevation, "sel_loss elevation");
  if (!(options.lambda >= 0.0) || !std::isfinite(options.lambda)) throw ConfigError("sel_loss: lambda must be >= 0");
  LossBreakdown b;
  b.activity = activity_loss(output.activity, activity);
  auto doa = permuted_doa_loss(output.azimuth, output.elevation, azimuth, elevation, activity, options.form);
  b.doa = doa.loss;
  b.permutation = std::move(doa.permutation);
  b.total = b.activity + scale(b.doa, options.lambda);
  return b;
}

double angular_distance(double az_a, double el_a, double az_b, double el_b) {
  const double dot = std::cos(el_a) * std::cos(el_b) * std::cos(az_a - az_b) + std::sin(el_a) * std::sin(el_b);
  return std::acos(std::clamp(dot, -1.0, 1.0));
}

}  // namespace adrenaline::loss
