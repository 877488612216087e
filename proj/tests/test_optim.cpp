#include <catch2/catch_amalgamated.hpp>

#include "xbert/optim.hpp"
#include "xbert/params.hpp"

using namespace xbert;

TEST_CASE("adamw leaves params unchanged with zero grad and zero decay") {
  ParamStore store;
  Tensor p = param_zeros(store, "p", {3});
  p.values() = {1.0f, -2.0f, 0.5f};
  AdamW opt(store, {.lr = 0.1f, .weight_decay = 0.0f});
  opt.step();
  REQUIRE(p.values() == std::vector<float>{1.0f, -2.0f, 0.5f});
  REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adamw first step matches the bias-corrected hand evaluation") {
  ParamStore store;
  Tensor p = param_zeros(store, "p", {1});
  p.values() = {1.0f};
  p.grad() = {1.0f};
  AdamW opt(store, {.lr = 0.1f, .weight_decay = 0.0f, .beta1 = 0.9f, .beta2 = 0.999f, .eps = 1e-8f});
  opt.step();
  // mhat = 1, vhat = 1 -> p = 1 - 0.1 * 1/(1 + 1e-8) ~= 0.9
  REQUIRE(p.values()[0] == Catch::Approx(0.9).epsilon(1e-5));
}

TEST_CASE("adamw decoupled decay shrinks params multiplicatively") {
  ParamStore store;
  Tensor p = param_zeros(store, "p", {1});
  p.values() = {4.0f};
  AdamW opt(store, {.lr = 0.1f, .weight_decay = 0.1f});
  opt.step();
  REQUIRE(p.values()[0] == Catch::Approx(4.0f * (1.0f - 0.01f)));
}

TEST_CASE("cosine schedule hits ramp endpoint, cosine endpoint and midpoint") {
  const float lr_max = 5e-4f;
  REQUIRE(cosine_lr(0, 10, 100, lr_max) == Catch::Approx(0.0f));
  REQUIRE(cosine_lr(10, 10, 100, lr_max) == Catch::Approx(lr_max));
  REQUIRE(cosine_lr(100, 10, 100, lr_max) == Catch::Approx(0.0f).margin(1e-10));
  REQUIRE(cosine_lr(55, 10, 100, lr_max) == Catch::Approx(lr_max / 2).epsilon(1e-5));
  // Clamping outside the schedule.
  REQUIRE(cosine_lr(-5, 10, 100, lr_max) == Catch::Approx(0.0f));
  REQUIRE(cosine_lr(200, 10, 100, lr_max) == Catch::Approx(0.0f).margin(1e-10));
}
