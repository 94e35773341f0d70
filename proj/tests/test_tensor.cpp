// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <sstream>

#include "adrenaline/checkpoint.hpp"
#include "adrenaline/gradcheck.hpp"
#include "adrenaline/ops.hpp"
#include "doctest.h"

using namespace adrenaline;
using namespace adrenaline::ad;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

// Values kept at least `gap` away from `kink`.
Tensor random_away_from(const Shape& shape, std::mt19937_64& rng, double kink, double gap) {
  Tensor t = random_tensor(shape, rng);
  for (auto& x : t.mutable_data()) {
    if (std::abs(x - kink) < gap) x = kink + (x < kink ? -gap : gap);
  }
  return t;
}

}  // namespace

TEST_CASE("elementwise examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  auto r = relu(Tensor::from({2}, {-1.0, 2.0}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);

  auto x = Tensor::scalar(1.0, true);
  auto y = acos_clamped(x);
  CHECK(y.item() == doctest::Approx(std::acos(1.0 - kAcosEps)).epsilon(1e-15));
  backward(y);
  CHECK(std::isfinite(x.grad()[0]));

  auto z = acos_clamped(Tensor::scalar(-1.0, true));
  CHECK(z.item() == doctest::Approx(M_PI).epsilon(1e-15));

  CHECK(log_clamped(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(kLogEps)));
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_NOTHROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3})));
  CHECK_NOTHROW(add(Tensor::zeros({3}), Tensor::zeros({2, 3})));
  CHECK_THROWS_AS(parse_op_kind("softplus"), std::invalid_argument);
  CHECK(parse_op_kind("acos_clamped") == OpKind::acos_clamped);
  CHECK_THROWS_AS(Tensor::from({1}, {std::nan("")}), ShapeError);
}

TEST_CASE("matmul examples") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto v = Tensor::from({2, 1}, {3, 4});
  auto p = matmul(eye, v);
  CHECK(p[0] == 3.0);
  CHECK(p[1] == 4.0);
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11.0);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);

  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto res = check_gradients([&] { return matmul(a, b); }, {a, b});
  CHECK(res.checked == 20);
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("conv2d examples") {
  // centered delta kernel copies the single input channel
  std::mt19937_64 rng(2);
  auto in = random_tensor({4, 5, 1}, rng);
  auto k = Tensor::zeros({1, 3, 3, 1});
  k.mutable_data()[4] = 1.0;
  auto out = conv2d(in, k, Tensor::zeros({1}));
  for (std::size_t i = 0; i < in.numel(); ++i) CHECK(out[i] == in[i]);

  // all-ones 2x2x1 input with an all-ones kernel: each output sums the whole
  // zero-padded neighbourhood, which here always covers all four inputs.
  auto ones = Tensor::full({2, 2, 1}, 1.0);
  auto onek = Tensor::full({1, 3, 3, 1}, 1.0);
  auto o2 = conv2d(ones, onek, Tensor::zeros({1}));
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t w = 0; w < 2; ++w) {
      double expect = 0.0;  // direct quadruple loop
      for (int dh = -1; dh <= 1; ++dh) {
        for (int dw = -1; dw <= 1; ++dw) {
          const int hh = static_cast<int>(h) + dh, ww = static_cast<int>(w) + dw;
          if (hh >= 0 && hh < 2 && ww >= 0 && ww < 2) expect += 1.0;
        }
      }
      CHECK(o2[h * 2 + w] == expect);
      CHECK(o2[h * 2 + w] == 4.0);
    }
  }
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 2, 2}), onek, Tensor::zeros({1})), ShapeError);

  auto x = random_tensor({2, 3, 4, 2}, rng);
  auto kern = random_tensor({3, 3, 3, 2}, rng);
  auto bias = random_tensor({3}, rng);
  auto res = check_gradients([&] { return conv2d(x, kern, bias); }, {x, kern, bias});
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("maxpool2d examples") {
  auto p = maxpool2d(Tensor::from({1, 4, 1}, {1, 3, 2, 8}), 1, 2);
  REQUIRE(p.numel() == 2);
  CHECK(p[0] == 3.0);
  CHECK(p[1] == 8.0);

  auto c = Tensor::full({1, 4, 1}, 5.0, true);
  auto pc = maxpool2d(c, 1, 2);
  CHECK(pc[0] == 5.0);
  backward(sum(pc));
  CHECK(c.grad()[0] == 1.0);
  CHECK(c.grad()[1] == 0.0);
  CHECK(c.grad()[2] == 1.0);
  CHECK(c.grad()[3] == 0.0);

  // L = 1024 -> 128 -> 16 -> 8 with floor truncation
  auto wide = Tensor::zeros({1, 1030, 1});
  CHECK(maxpool2d(wide, 1, 8).dim(1) == 128);
  CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 4, 1}), 1, 8), ShapeError);

  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 8, 2}, rng);
  auto res = check_gradients([&] { return maxpool2d(x, 1, 4); }, {x});
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("batchnorm examples") {
  std::mt19937_64 rng(4);
  auto x = random_tensor({5, 3, 2}, rng, -3.0, 5.0);
  BatchNormStats stats(2);
  auto y = batchnorm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), stats, NormMode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 15; ++i) m += y[i * 2 + c];
    m /= 15;
    for (std::size_t i = 0; i < 15; ++i) v += (y[i * 2 + c] - m) * (y[i * 2 + c] - m);
    v /= 15;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(kBatchNormEps));
  }
  CHECK(stats.ready());

  auto beta = Tensor::from({2}, {0.25, -1.5});
  BatchNormStats s2(2);
  auto z = batchnorm(x, Tensor::zeros({2}), beta, s2, NormMode::train);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == beta[i % 2]);

  BatchNormStats fresh(2);
  CHECK_THROWS_AS(batchnorm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), fresh, NormMode::eval), std::logic_error);

  auto g = random_tensor({2}, rng), b = random_tensor({2}, rng);
  BatchNormStats s3(2);
  auto res = check_gradients([&] { return batchnorm(x, g, b, s3, NormMode::train); }, {x, g, b});
  CHECK(res.max_rel_error < 1e-4);
  auto res_eval = check_gradients([&] { return batchnorm(x, g, b, s3, NormMode::eval); }, {x, g, b});
  CHECK(res_eval.max_rel_error < 1e-4);
}

TEST_CASE("softmax examples") {
  auto u = softmax(Tensor::from({3}, {2.5, 2.5, 2.5}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto s = softmax(Tensor::from({2}, {1000.0, 0.0}));
  CHECK(s[0] == 1.0);
  CHECK(s[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(s[1]));

  std::mt19937_64 rng(5);
  auto x = random_tensor({6}, rng, -3, 3);
  auto res = check_gradients([&] { return softmax(x); }, {x});
  CHECK(res.max_rel_error < 1e-6);

  for (int trial = 0; trial < 100; ++trial) {
    auto r = softmax(random_tensor({7}, rng, -50, 50));
    double total = 0;
    for (double v : r.data()) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("concat examples") {
  auto a = Tensor::from({2}, {1, 2});
  auto single = concat({a}, 0);
  CHECK(single[0] == 1.0);
  CHECK(single[1] == 2.0);
  auto c = concat({a, Tensor::from({1}, {3})}, 0);
  REQUIRE(c.numel() == 3);
  CHECK(c[2] == 3.0);
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 2}), Tensor::zeros({3, 3})}, 0), ShapeError);

  // d sum(concat) / d part = ones, i.e. the concatenation of each part's d sum / d part
  auto p = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  auto q = Tensor::from({2, 1}, {5, 6}, true);
  backward(sum(concat({p, q}, 1)));
  for (double g : p.grad()) CHECK(g == 1.0);
  for (double g : q.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward examples and tape rules") {
  auto x = Tensor::scalar(7.0, true);
  backward(x);
  CHECK(x.grad()[0] == 1.0);

  auto a = Tensor::scalar(2.0, true), b = Tensor::scalar(3.0, true);
  auto prod = mul(a, b);
  backward(prod);
  CHECK(a.grad()[0] == 3.0);
  CHECK(b.grad()[0] == 2.0);

  CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ShapeError);

  // consumed tape
  CHECK_THROWS_AS(backward(prod), std::logic_error);

  // a node with two consumers: f = sin(u) * u with u = 3x  =>  df/dx = 3(cos(u) u + sin(u))
  auto xv = Tensor::scalar(0.7, true);
  auto uu = scale(xv, 3.0);
  backward(mul(sin(uu), uu));
  const double u = 2.1;
  CHECK(xv.grad()[0] == doctest::Approx(3.0 * (std::cos(u) * u + std::sin(u))).epsilon(1e-14));
}

TEST_CASE("finite differences agree for every differentiable op on random instances") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({3}, rng, 0.5, 2.0);
    auto pos = random_tensor({2, 3}, rng, 0.1, 2.0);
    auto kinked = random_away_from({2, 3}, rng, 0.0, 1e-3);
    auto inside = random_tensor({2, 3}, rng, -0.95, 0.95);
    std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return add(a, b); }},
        {"sub", [&] { return sub(b, a); }},
        {"mul", [&] { return mul(a, b); }},
        {"div", [&] { return div(a, b); }},
        {"sigmoid", [&] { return sigmoid(a); }},
        {"tanh", [&] { return tanh(a); }},
        {"relu", [&] { return relu(kinked); }},
        {"sin", [&] { return sin(a); }},
        {"cos", [&] { return cos(a); }},
        {"acos", [&] { return acos_clamped(inside); }},
        {"log", [&] { return log_clamped(pos); }},
        {"exp", [&] { return exp(a); }},
        {"scale", [&] { return scale(a, -2.5); }},
        {"narrow", [&] { return narrow(a, 1, 1, 2); }},
        {"flip", [&] { return flip(a, 1); }},
        {"stack", [&] { return stack({a, pos}, 1); }},
        {"mean", [&] { return mean(a); }},
    };
    for (auto& [name, fn] : cases) {
      auto res = check_gradients(fn, {a, b, pos, kinked, inside});
      CAPTURE(name);
      CHECK(res.max_rel_error < 1e-4);
      worst = std::max(worst, res.max_rel_error);
    }
  }
  MESSAGE("worst relative error: " << worst);
}

TEST_CASE("gradient check detects an injected backward sign flip") {
  std::mt19937_64 rng(12);
  auto a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  testing::inject_sign_flip(OpKind::mul);
  auto bad = check_gradients([&] { return mul(a, b); }, {a, b});
  testing::inject_sign_flip(std::nullopt);
  CHECK(bad.max_rel_error > 1.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(13);
  std::vector<NamedArray> arrays = {
      {"encoder.fwd.w_x", {3, 4}, {}},
      {"scalar", {}, {-0.0}},
      {"odd", {2}, {std::nextafter(1.0, 2.0), 1e-310}},
  };
  for (double i = 0; i < 12; ++i) arrays[0].values.push_back(std::normal_distribution<double>()(rng));
  std::stringstream ss;
  write_checkpoint(ss, arrays);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "ADRN");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  auto back = read_checkpoint(ss);
  REQUIRE(back.size() == arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    CHECK(back[i].name == arrays[i].name);
    CHECK(back[i].shape == arrays[i].shape);
    REQUIRE(back[i].values.size() == arrays[i].values.size());
    for (std::size_t j = 0; j < arrays[i].values.size(); ++j) {
      CHECK(std::bit_cast<std::uint64_t>(back[i].values[j]) == std::bit_cast<std::uint64_t>(arrays[i].values[j]));
    }
  }
  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == bytes);

  std::stringstream junk("ADRX....");
  CHECK_THROWS_AS(read_checkpoint(junk), DataError);
}
