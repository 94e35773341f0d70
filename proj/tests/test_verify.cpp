// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/ops.hpp"
#include "adrenaline/verify.hpp"
#include "doctest.h"

using namespace adrenaline;

TEST_CASE("the oracle suite passes on a clean build") {
  for (const auto& r : verify::run_all()) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    MESSAGE(r.name << ": max error " << r.max_error << " in " << r.seconds << " s");
    CHECK(r.passed);
    CHECK(r.max_error <= r.tolerance);
  }
}

TEST_CASE("an injected sign flip makes the gradient check fail") {
  for (auto kind : {ad::OpKind::mul, ad::OpKind::sigmoid, ad::OpKind::cos}) {
    ad::testing::inject_sign_flip(kind);
    auto r = verify::op_gradients(1);
    ad::testing::inject_sign_flip(std::nullopt);
    CHECK_FALSE(r.passed);
    CHECK(r.detail.find(std::string(ad::op_kind_name(kind))) != std::string::npos);
  }
}
