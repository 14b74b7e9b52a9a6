#include <algorithm>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "edunet/gradcheck_suite.hpp"

using namespace edunet;

TEST_CASE("gradcheck suite: registry covers ops, blocks, loss and the full model") {
  std::set<std::string> names;
  for (const auto& c : gradcheck_cases()) CHECK(names.insert(c.name).second);
  for (const char* n : {"conv2d", "conv_transpose2d", "batch_norm_train", "layer_norm", "softmax",
                        "interpolate_up", "gaussian_blur", "se", "mbconv", "lkec", "cbam",
                        "mc_ega_mean", "mc_ega_one_minus_bg", "dice_loss", "edunet_forward"})
    CHECK_MESSAGE(names.count(n), n);
  CHECK_FALSE(names.count("broken_rule"));
  CHECK(gradcheck_cases(true).back().name == "broken_rule");
}

TEST_CASE("gradcheck suite: every op and block passes in both precisions") {
  std::vector<std::string> fast;
  for (const auto& c : gradcheck_cases())
    if (c.name != "edunet_forward") fast.push_back(c.name);
  const auto rows = run_gradcheck_suite(fast, 0);
  CHECK(rows.size() > fast.size());
  for (const auto& r : rows) {
    INFO(r.name, " ", dtype_name(r.dtype), " err ", r.report.max_rel_error);
    CHECK(r.report.passed);
    CHECK(r.report.tol == (r.dtype == DType::F64 ? 1e-5 : 1e-3));
  }
}

TEST_CASE("gradcheck suite: a deliberately wrong backward is caught") {
  const auto rows = run_gradcheck_suite({"broken_rule"}, 3, true);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK_FALSE(r.report.passed);
    CHECK(r.report.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
  }
}

TEST_CASE("gradcheck suite: unknown names are rejected") {
  CHECK_THROWS_AS(run_gradcheck_suite({"conv2d", "no_such_op"}, 0), std::invalid_argument);
  CHECK_THROWS_AS(run_gradcheck_suite({"broken_rule"}, 0, false), std::invalid_argument);
}
