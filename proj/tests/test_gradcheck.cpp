// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "test_util.hpp"
#include "xmr/gradcheck.hpp"

using namespace xmr;

TEST_CASE("every loss passes a short gradient check") {
  GradcheckOptions o;
  o.seeds = 4;
  for (const auto& name : gradcheck_loss_names()) {
    CAPTURE(name);
    const auto r = gradcheck_loss(name, o);
    CHECK(r.batches == 4);
    CHECK(r.passed);
    CHECK(r.max_relative_error < 1e-5);
  }
}

TEST_CASE("a wrong gradient is caught") {
  ParamSet vars;
  vars.add("x", Matrix{{1.0, 2.0}});
  const LossFunction bad = [](const ParamSet& v) {
    const Matrix& x = v.at("x");
    LossResult r;
    r.value = x[0] * x[0] + x[1] * x[1];
    r.gradients.emplace("x", Matrix{{2 * x[0], 3 * x[1]}});
    return r;
  };
  Rng rng(1);
  const auto checks = check_gradients(bad, vars, {"x"}, GradcheckOptions{}, rng);
  REQUIRE(checks.size() == 1);
  CHECK(checks[0].max_relative_error > 0.1);
}

TEST_CASE("unknown loss name") {
  CHECK(xmr::test::code_of([] { gradcheck_loss("mse", GradcheckOptions{}); }) == ErrorCode::ConfigInvalid);
}
