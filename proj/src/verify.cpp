// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "adrenaline/gradcheck.hpp"
#include "adrenaline/loss.hpp"
#include "adrenaline/metrics.hpp"
#include "adrenaline/model.hpp"
#include "adrenaline/train.hpp"

namespace adrenaline::verify {

using namespace adrenaline::ad;
using nlohmann::ordered_json;

namespace {

constexpr double pi = std::numbers::pi;

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

template <class Fn>
CheckResult timed(std::string name, double tolerance, Fn&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  tape().clear();
  return r;
}

model::ModelConfig micro() {
  model::ModelConfig c;
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

void randomize(model::Model& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> g(0.0, stddev);
  for (auto& p : m.parameters()) {
    for (auto& v : p.value.mutable_data()) v = g(rng);
  }
}

double unit_vector_angle(double az1, double el1, double az2, double el2) {
  const double u[3] = {std::cos(el1) * std::cos(az1), std::cos(el1) * std::sin(az1), std::sin(el1)};
  const double w[3] = {std::cos(el2) * std::cos(az2), std::cos(el2) * std::sin(az2), std::sin(el2)};
  return std::acos(std::clamp(u[0] * w[0] + u[1] * w[1] + u[2] * w[2], -1.0, 1.0));
}

double brute_force(const metrics::Matrix& c) {
  std::vector<std::size_t> p(c.size());
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c[i][p[i]];
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

ordered_json CheckResult::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["passed"] = passed;
  j["max_error"] = max_error;
  j["tolerance"] = tolerance;
  j["detail"] = detail;
  j["seconds"] = seconds;
  return j;
}

CheckResult op_gradients(std::size_t trials, std::uint64_t seed) {
  return timed("op gradients", 1e-4, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::string worst_op;
    std::size_t checked = 0, skipped = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      auto a = uniform({2, 3}, rng);
      auto b = uniform({3}, rng, 0.5, 2.0);
      auto pos = uniform({2, 3}, rng, 0.1, 2.0);
      auto inside = uniform({2, 3}, rng, -0.95, 0.95);
      auto m1 = uniform({3, 4}, rng), m2 = uniform({4, 2}, rng);
      auto b1 = uniform({2, 3, 4}, rng), b2 = uniform({2, 4, 2}, rng);
      auto img = uniform({2, 4, 5, 2}, rng), ker = uniform({3, 3, 3, 2}, rng), bias = uniform({3}, rng);
      auto pool_in = uniform({2, 4, 6, 2}, rng);
      auto bn_in = uniform({3, 4, 2}, rng), gamma = uniform({2}, rng, 0.5, 1.5), beta = uniform({2}, rng);
      BatchNormStats stats(2);
      std::vector<Tensor> inputs{a, b, pos, inside, m1, m2, b1, b2, img, ker, bias, pool_in, bn_in, gamma, beta};
      const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
          {"add", [&] { return add(a, b); }},
          {"sub", [&] { return sub(b, a); }},
          {"mul", [&] { return mul(a, b); }},
          {"div", [&] { return div(a, b); }},
          {"sigmoid", [&] { return sigmoid(a); }},
          {"tanh", [&] { return tanh(a); }},
          {"relu", [&] { return relu(a); }},
          {"sin", [&] { return sin(a); }},
          {"cos", [&] { return cos(a); }},
          {"acos_clamped", [&] { return acos_clamped(inside); }},
          {"log_clamped", [&] { return log_clamped(pos); }},
          {"exp", [&] { return exp(a); }},
          {"scale", [&] { return scale(a, -2.5); }},
          {"add_scalar", [&] { return add_scalar(a, 0.7); }},
          {"neg", [&] { return neg(a); }},
          {"matmul", [&] { return matmul(m1, m2); }},
          {"bmm", [&] { return bmm(b1, b2); }},
          {"conv2d", [&] { return conv2d(img, ker, bias); }},
          {"maxpool2d", [&] { return maxpool2d(pool_in, 2, 3); }},
          {"batchnorm", [&] { return batchnorm(bn_in, gamma, beta, stats, NormMode::train, false); }},
          {"softmax", [&] { return softmax(b1); }},
          {"concat", [&] { return concat({a, pos}, 0); }},
          {"stack", [&] { return stack({a, pos}, 1); }},
          {"reshape", [&] { return reshape(m1, {2, 6}); }},
          {"narrow", [&] { return narrow(a, 1, 1, 2); }},
          {"select", [&] { return select(b1, 1, 2); }},
          {"flip", [&] { return flip(a, 1); }},
          {"sum", [&] { return sum(b1); }},
          {"mean", [&] { return mean(a); }},
      };
      for (const auto& [name, fn] : cases) {
        auto res = check_gradients(fn, inputs);
        checked += res.checked;
        skipped += res.skipped;
        if (res.max_rel_error >= r.max_error) r.max_error = res.max_rel_error, worst_op = name;
        tape().clear();
      }
    }
    r.passed = r.max_error < r.tolerance;
    std::ostringstream os;
    os << "29 ops x " << trials << " trials, " << checked << " entries, " << skipped << " kink skips, worst op "
       << worst_op;
    r.detail = os.str();
  });
}

CheckResult end_to_end_gradient(std::uint64_t seed) {
  return timed("end-to-end gradient", 1e-3, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    model::Model m(micro());
    randomize(m, rng, 0.4);
    const auto& c = m.config();
    const std::size_t B = 2, n = B * c.frames * c.slots;
    auto x = uniform({B, c.frames, c.bins, 2 * c.channels}, rng);
    std::bernoulli_distribution on(0.6);
    std::uniform_real_distribution<double> az(-3.1, 3.1), el(-1.0, 1.0);
    std::vector<double> act(n), a(n), e(n);
    for (std::size_t i = 0; i < n; ++i) {
      act[i] = on(rng) ? 1.0 : 0.0;
      a[i] = act[i] ? az(rng) : 0.0;
      e[i] = act[i] ? el(rng) : 0.0;
    }
    const Shape s{B, c.frames, c.slots};
    Tensor ta = Tensor::from(s, act), tz = Tensor::from(s, a), te = Tensor::from(s, e);
    std::vector<Tensor> params;
    for (auto& p : m.parameters()) params.push_back(p.value);
    params.push_back(x);
    auto res = check_gradients(
        [&] {
          auto out = m.forward(x, {NormMode::train, false, std::nullopt});
          return loss::sel_loss(out, ta, tz, te).total;
        },
        params);
    r.max_error = res.max_rel_error;
    r.passed = res.max_rel_error < r.tolerance && res.checked > 0;
    r.detail = std::to_string(res.checked) + " entries, " + std::to_string(res.skipped) + " kink skips";
  });
}

CheckResult hungarian_oracle(std::size_t cases, std::uint64_t seed) {
  return timed("hungarian vs brute force", 0.0, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 10);
    std::size_t mismatches = 0;
    for (std::size_t t = 0; t < cases; ++t) {
      metrics::Matrix c(4, std::vector<double>(4));
      for (auto& row : c) {
        for (auto& v : row) v = u(rng);
      }
      const double h = metrics::hungarian(c).cost, bf = brute_force(c);
      r.max_error = std::max(r.max_error, std::abs(h - bf));
      if (h != bf) ++mismatches;
    }
    r.passed = mismatches == 0;
    r.detail = std::to_string(cases) + " matrices, " + std::to_string(mismatches) + " inexact";
  });
}

CheckResult permutation_loss_oracle(std::size_t cases, std::uint64_t seed) {
  return timed("permutation loss vs hungarian", 1e-12, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> az(-pi, pi), el(-1.2, 1.2);
    std::bernoulli_distribution on(0.5);
    const std::size_t S = 4;
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < cases; ++t) {
      std::vector<double> ah(S), eh(S), a(S), e(S), g(S);
      for (std::size_t s = 0; s < S; ++s) {
        ah[s] = az(rng), eh[s] = el(rng), a[s] = az(rng), e[s] = el(rng), g[s] = on(rng) ? 1.0 : 0.0;
      }
      auto T = [&](const std::vector<double>& v) { return Tensor::from({1, S}, v); };
      const double value = loss::permuted_doa_loss(T(ah), T(eh), T(a), T(e), T(g)).loss.item();
      metrics::Matrix cost(S, std::vector<double>(S));
      for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = 0; j < S; ++j) {
          const double d = loss::doa_error(Tensor::from({1}, {ah[i]}), Tensor::from({1}, {eh[i]}),
                                           Tensor::from({1}, {a[j]}), Tensor::from({1}, {e[j]}))[0];
          cost[i][j] = g[j] * d / static_cast<double>(S);
        }
      }
      r.max_error = std::max(r.max_error, std::abs(metrics::hungarian(cost).cost - value));
    }
    r.passed = r.max_error < r.tolerance;
    r.detail = std::to_string(cases) + " instances, S=4";
  });
}

CheckResult doa_oracle(std::size_t pairs, std::uint64_t seed) {
  return timed("doa error oracle", 1e-9, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> az(-pi, pi), el(-pi / 2, pi / 2);
    std::vector<double> a1(pairs), e1(pairs), a2(pairs), e2(pairs), anti_a(pairs), anti_e(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
      a1[i] = az(rng), e1[i] = el(rng), a2[i] = az(rng), e2[i] = el(rng);
      anti_a[i] = a1[i] - pi, anti_e[i] = -e1[i];
    }
    auto T = [&](const std::vector<double>& v) { return Tensor::from({pairs}, v); };
    NoGradGuard no_grad;
    auto d = loss::doa_error(T(a1), T(e1), T(a2), T(e2));
    auto same = loss::doa_error(T(a1), T(e1), T(a1), T(e1));
    auto anti = loss::doa_error(T(a1), T(e1), T(anti_a), T(anti_e));
    double worst_identity = 0, worst_anti = 0;
    for (std::size_t i = 0; i < pairs; ++i) {
      r.max_error = std::max(r.max_error, std::abs(d[i] - unit_vector_angle(a1[i], e1[i], a2[i], e2[i])));
      worst_identity = std::max(worst_identity, same[i]);
      worst_anti = std::max(worst_anti, std::abs(anti[i] - pi));
    }
    r.passed = r.max_error < r.tolerance && worst_identity < 1e-3 && worst_anti < 1e-6;
    std::ostringstream os;
    os << pairs << " pairs; identity max " << worst_identity << " rad (< 1e-3); antipodal max |d - pi| " << worst_anti
       << " (< 1e-6)";
    r.detail = os.str();
  });
}

CheckResult attention_rows(std::size_t passes, std::uint64_t seed) {
  return timed("attention rows", 1e-6, [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    model::Model m(micro());
    const auto& c = m.config();
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < passes; ++t) {
      randomize(m, rng, 0.8);
      auto out = m.forward(uniform({2, c.frames, c.bins, 2 * c.channels}, rng, -3.0, 3.0),
                           {NormMode::train, false, std::nullopt});
      const auto& w = *out.attention;
      for (std::size_t row = 0; row < 2 * c.frames; ++row) {
        double s = 0;
        for (std::size_t k = 0; k < c.frames; ++k) s += w[row * c.frames + k];
        r.max_error = std::max(r.max_error, std::abs(s - 1.0));
      }
    }
    // zero decoder state: scores vanish and the weights are exactly uniform
    double uniform_dev = 0;
    for (std::size_t K : {4u, 7u, 25u}) {
      auto a = model::attend(uniform({3, K, 8}, rng, -5.0, 5.0), Tensor::zeros({3, 8}));
      for (std::size_t i = 0; i < a.weights.numel(); ++i) {
        uniform_dev = std::max(uniform_dev, std::abs(a.weights[i] - 1.0 / static_cast<double>(K)));
      }
    }
    r.passed = r.max_error < r.tolerance && uniform_dev < 1e-12;
    std::ostringstream os;
    os << passes << " forward passes; zero-state deviation from 1/K " << uniform_dev << " (< 1e-12)";
    r.detail = os.str();
  });
}

CheckResult paper_shapes() {
  return timed("shape contract at full dims", 0.0, [&](CheckResult& r) {
    model::Model m(model::ModelConfig{});
    train::kaiming_init(m, 0);
    const auto& c = m.config();
    std::mt19937_64 rng(8);
    NoGradGuard no_grad;
    auto x = uniform({1, c.frames, c.bins, 2 * c.channels}, rng);
    auto y = m.extract(x, NormMode::train, false);
    auto enc = model::encode(m.encoder, y);
    auto out = m.forward_features(y, {NormMode::train, false, std::nullopt});
    const Shape want_y{1, 25, 512}, want_enc{1, 25, 128}, want_head{1, 25, 4}, want_att{1, 25, 25};
    const bool heads = out.activity.shape() == want_head && out.azimuth.shape() == want_head &&
                       out.elevation.shape() == want_head;
    r.passed = x.shape() == Shape{1, 25, 1024, 8} && y.shape() == want_y && enc.shape() == want_enc && heads &&
               out.attention && out.attention->shape() == want_att;
    r.detail = "input " + shape_str(x.shape()) + ", y " + shape_str(y.shape()) + ", encoder " +
               shape_str(enc.shape()) + ", heads 3 x " + shape_str(out.activity.shape()) + ", attention " +
               (out.attention ? shape_str(out.attention->shape()) : std::string("none"));
    r.max_error = r.passed ? 0.0 : 1.0;
  });
}

CheckResult mann_whitney_oracle(std::size_t cases, std::uint64_t seed) {
  return timed("mann-whitney oracle", 0.0, [&](CheckResult& r) {
    struct Case {
      std::vector<double> a, b;
      double u, p_less;
    };
    // p_less enumerated by hand over the C(n+m, n) arrangements
    const std::vector<Case> exact = {
        {{1, 2}, {3, 4}, 0.0, 1.0 / 6.0},
        {{1}, {2, 3}, 0.0, 1.0 / 3.0},
        {{1, 2, 3}, {4, 5, 6}, 0.0, 1.0 / 20.0},
        {{1, 3}, {2, 4}, 1.0, 2.0 / 6.0},
    };
    bool ok = true;
    for (const auto& c : exact) {
      auto res = metrics::mann_whitney_u(c.a, c.b);
      ok = ok && res.exact && res.u == c.u && res.p_less == c.p_less;
      r.max_error = std::max({r.max_error, std::abs(res.u - c.u), std::abs(res.p_less - c.p_less)});
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(1, 20), val(0, 6);
    std::size_t broken = 0;
    for (std::size_t t = 0; t < cases; ++t) {
      std::vector<double> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
      for (auto& v : a) v = val(rng);
      for (auto& v : b) v = val(rng);
      auto ab = metrics::mann_whitney_u(a, b), ba = metrics::mann_whitney_u(b, a);
      const double gap = std::abs(ab.u + ba.u - static_cast<double>(a.size() * b.size()));
      r.max_error = std::max(r.max_error, gap);
      if (gap != 0.0 || !(ab.p_two_sided > 0.0 && ab.p_two_sided <= 1.0)) ++broken;
    }
    r.passed = ok && broken == 0;
    r.detail = std::to_string(exact.size()) + " enumerated cases, " + std::to_string(cases) +
               " complement cases, " + std::to_string(broken) + " violations";
  });
}

std::vector<CheckResult> run_all() {
  return {op_gradients(),     end_to_end_gradient(), hungarian_oracle(), permutation_loss_oracle(),
          doa_oracle(),       attention_rows(),      paper_shapes(),     mann_whitney_oracle()};
}

}  // namespace adrenaline::verify
