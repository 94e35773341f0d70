// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "adrenaline/error.hpp"
#include "adrenaline/gradcheck.hpp"
#include "adrenaline/loss.hpp"
#include "adrenaline/metrics.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace adrenaline;
using namespace adrenaline::ad;
using namespace adrenaline::loss;

namespace {

constexpr double pi = std::numbers::pi;

double rad(double deg) { return deg * pi / 180.0; }

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from({n}, std::move(v));
}

double oracle_angle(double az1, double el1, double az2, double el2) {
  const double u[3] = {std::cos(el1) * std::cos(az1), std::cos(el1) * std::sin(az1), std::sin(el1)};
  const double w[3] = {std::cos(el2) * std::cos(az2), std::cos(el2) * std::sin(az2), std::sin(el2)};
  return std::acos(std::clamp(u[0] * w[0] + u[1] * w[1] + u[2] * w[2], -1.0, 1.0));
}

}  // namespace

TEST_CASE("doa error examples") {
  auto same = doa_error(vec({0.3}), vec({-0.2}), vec({0.3}), vec({-0.2}));
  CHECK(same[0] < 1e-3);
  CHECK(same[0] >= 0.0);
  auto anti = doa_error(vec({rad(40)}), vec({rad(25)}), vec({rad(40) - pi}), vec({-rad(25)}));
  CHECK(std::abs(anti[0] - pi) < 1e-6);
  auto ortho = doa_error(vec({0.0}), vec({0.0}), vec({pi / 2}), vec({0.0}));
  CHECK(ortho[0] == doctest::Approx(pi / 2).epsilon(1e-12));
  auto mixed = doa_error(vec({rad(30)}), vec({rad(20)}), vec({rad(-45)}), vec({rad(10)}));
  CHECK(std::abs(mixed[0] - oracle_angle(rad(30), rad(20), rad(-45), rad(10))) < 1e-9);
}

TEST_CASE("doa error symmetry and 2 pi invariance") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> az(-pi, pi), el(-pi / 2, pi / 2);
  for (int i = 0; i < 500; ++i) {
    const double a1 = az(rng), e1 = el(rng), a2 = az(rng), e2 = el(rng);
    const double x = doa_error(vec({a1}), vec({e1}), vec({a2}), vec({e2}))[0];
    const double y = doa_error(vec({a2}), vec({e2}), vec({a1}), vec({e1}))[0];
    const double z = doa_error(vec({a1 + 2 * pi}), vec({e1}), vec({a2}), vec({e2}))[0];
    CHECK(x == y);
    CHECK(std::abs(x - z) < 1e-9);
    CHECK(std::abs(x - oracle_angle(a1, e1, a2, e2)) < 1e-9);
    CHECK(x >= 0.0);
    CHECK(x <= pi);
  }
}

TEST_CASE("literal form swaps the roles of azimuth and elevation") {
  // with azimuth in the latitude slot, equal azimuths at +-90 deg collapse to the pole
  auto lit = doa_error(vec({pi / 2}), vec({0.0}), vec({pi / 2}), vec({pi}), DoaForm::literal);
  CHECK(lit[0] < 1e-3);
  auto uv = doa_error(vec({pi / 2}), vec({0.0}), vec({pi / 2}), vec({pi}), DoaForm::unit_vector);
  CHECK(uv[0] > 1.0);
  // literal(az, el) equals unit-vector with the roles exchanged
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 100; ++i) {
    const double a1 = u(rng), e1 = u(rng), a2 = u(rng), e2 = u(rng);
    const double l = doa_error(vec({a1}), vec({e1}), vec({a2}), vec({e2}), DoaForm::literal)[0];
    CHECK(std::abs(l - oracle_angle(e1, a1, e2, a2)) < 1e-9);
  }
  CHECK(parse_doa_form("literal") == DoaForm::literal);
  CHECK_THROWS_AS(parse_doa_form("eq6"), ConfigError);
}

TEST_CASE("activity loss") {
  auto g = vec({1, 0, 1, 0});
  CHECK(activity_loss(vec({1, 0, 1, 0}), g).item() < 1e-11);
  CHECK(activity_loss(vec({0.5, 0.5, 0.5, 0.5}), g).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> h(6);
  for (auto& v : h) v = u(rng);
  Tensor hat = Tensor::from({6}, h, true);
  auto r = check_gradients([&] { return activity_loss(hat, vec({1, 0, 0, 1, 1, 0})); }, {hat});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("masked doa loss") {
  auto xi = vec({0.4, 1.0, 2.0, 0.7});
  CHECK(masked_doa_loss(xi, vec({1, 0, 0, 0})).item() == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(masked_doa_loss(xi, vec({1, 1, 1, 1})).item() == doctest::Approx((0.4 + 1.0 + 2.0 + 0.7) / 4));
  Tensor x = Tensor::from({4}, {0.4, 1.0, 2.0, 0.7}, true);
  auto l = masked_doa_loss(x, vec({0, 0, 0, 0}));
  CHECK(l.item() == 0.0);
  backward(l);
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("permuted doa loss picks the swap for crossed predictions") {
  Tensor az_hat = Tensor::from({1, 2}, {rad(90), rad(0)});
  Tensor el_hat = Tensor::from({1, 2}, {0.0, 0.0});
  Tensor az = Tensor::from({1, 2}, {rad(0), rad(90)});
  Tensor el = Tensor::from({1, 2}, {0.0, 0.0});
  Tensor g = Tensor::from({1, 2}, {1, 1});
  auto r = permuted_doa_loss(az_hat, el_hat, az, el, g);
  auto identity = masked_doa_loss(doa_error(az_hat, el_hat, az, el), g).item();
  CHECK(identity > r.loss.item());
  CHECK(r.permutation[0] == std::vector<std::size_t>{1, 0});
  CHECK(r.loss.item() < 1e-3);

  auto none = permuted_doa_loss(az_hat, el_hat, az, el, Tensor::zeros({1, 2}));
  CHECK(none.loss.item() == 0.0);
  CHECK(none.permutation[0] == std::vector<std::size_t>{0, 1});

  Tensor big = Tensor::zeros({1, 7});
  CHECK_THROWS_AS(permuted_doa_loss(big, big, big, big, big), ConfigError);
}

TEST_CASE("permuted loss invariances and Hungarian equivalence") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> az(-pi, pi), el(-1.2, 1.2);
  std::bernoulli_distribution on(0.5);
  const std::size_t S = 4;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> ah(S), eh(S), a(S), e(S), g(S);
    for (std::size_t s = 0; s < S; ++s) {
      ah[s] = az(rng), eh[s] = el(rng), a[s] = az(rng), e[s] = el(rng), g[s] = on(rng);
    }
    auto T = [&](const std::vector<double>& v) { return Tensor::from({1, S}, v); };
    auto r = permuted_doa_loss(T(ah), T(eh), T(a), T(e), T(g));
    const double value = r.loss.item();
    // minimisation property
    CHECK(value <= masked_doa_loss(doa_error(T(ah), T(eh), T(a), T(e)), T(g)).item() + 1e-15);
    // invariance under reordering the predictions
    std::vector<std::size_t> p(S);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    std::vector<double> ah2(S), eh2(S);
    for (std::size_t s = 0; s < S; ++s) ah2[s] = ah[p[s]], eh2[s] = eh[p[s]];
    CHECK(std::abs(permuted_doa_loss(T(ah2), T(eh2), T(a), T(e), T(g)).loss.item() - value) < 1e-12);
    // Hungarian on the masked cost matrix
    metrics::Matrix cost(S, std::vector<double>(S));
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        const double xi = doa_error(vec({ah[i]}), vec({eh[i]}), vec({a[j]}), vec({e[j]}))[0];
        cost[i][j] = g[j] * xi / static_cast<double>(S);
      }
    }
    CHECK(std::abs(metrics::hungarian(cost).cost - value) < 1e-12);
  }
}

TEST_CASE("sel loss composition and masking") {
  std::mt19937_64 rng(5);
  auto hat = test_helpers::random_tensor({2, 3, 2}, rng);
  model::SelOutput out{sigmoid(hat), test_helpers::random_tensor({2, 3, 2}, rng),
                       test_helpers::random_tensor({2, 3, 2}, rng), std::nullopt};
  Tensor ga = Tensor::from({2, 3, 2}, {1, 0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0});
  auto ta = test_helpers::random_tensor({2, 3, 2}, rng);
  auto te = test_helpers::random_tensor({2, 3, 2}, rng);
  auto b = sel_loss(out, ga, ta, te);
  CHECK(std::abs(b.total.item() - (b.activity.item() + b.doa.item())) < 1e-12);
  const double hand = activity_loss(out.activity, ga).item() +
                      permuted_doa_loss(out.azimuth, out.elevation, ta, te, ga).loss.item();
  CHECK(std::abs(b.total.item() - hand) < 1e-12);
  CHECK(b.permutation.size() == 6);

  auto z = sel_loss(out, ga, ta, te, {0.0, DoaForm::unit_vector});
  CHECK(z.total.item() == z.activity.item());

  // perfect predictions
  Tensor act_perfect = Tensor::from({2, 3, 2}, {1, 0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0});
  model::SelOutput perfect{act_perfect, ta, te, std::nullopt};
  CHECK(sel_loss(perfect, ga, ta, te).total.item() < 1e-3);
  CHECK_THROWS_AS(sel_loss(out, Tensor::zeros({2, 3, 3}), ta, te), ShapeError);
  tape().clear();
}

TEST_CASE("inactive slots receive exactly zero angle gradients") {
  std::mt19937_64 rng(6);
  Tensor az_hat = test_helpers::random_tensor({3, 4, 2}, rng, 1.0, true);
  Tensor el_hat = test_helpers::random_tensor({3, 4, 2}, rng, 1.0, true);
  Tensor act_hat = test_helpers::random_tensor({3, 4, 2}, rng, 1.0, true);
  std::vector<double> g(24, 0.0);
  for (std::size_t n = 0; n < 12; n += 2) g[n * 2] = g[n * 2 + 1] = 1.0;  // even frames fully active
  Tensor ga = Tensor::from({3, 4, 2}, g);
  auto b = sel_loss({sigmoid(act_hat), az_hat, el_hat, std::nullopt}, ga, test_helpers::random_tensor({3, 4, 2}, rng),
                    test_helpers::random_tensor({3, 4, 2}, rng));
  backward(b.total);
  for (std::size_t n = 0; n < 12; ++n) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (n % 2) {
        CHECK(az_hat.grad()[n * 2 + s] == 0.0);
        CHECK(el_hat.grad()[n * 2 + s] == 0.0);
      } else {
        CHECK(az_hat.grad()[n * 2 + s] != 0.0);
      }
    }
  }
}
