// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "vtlab/checkpoint.hpp"
#include "vtlab/optim.hpp"

using namespace vtlab;

TEST_CASE("schedule_lr closed-form values") {
  // both branches meet at the warmup step
  LrSchedule s1{2e-3, 20000};
  CHECK(schedule_lr(s1, 20000) == doctest::Approx(1.4142135623730950488e-5).epsilon(1e-12));
  const double left = 2e-3 * 20000 * std::pow(20000.0, -1.5);
  CHECK(schedule_lr(s1, 20000) == doctest::Approx(left).epsilon(1e-12));

  LrSchedule s2{0.2, 10000};
  CHECK(schedule_lr(s2, 100) == doctest::Approx(2e-5).epsilon(1e-12));

  CHECK_THROWS_AS(schedule_lr(s1, 0), ContractError);
}

TEST_CASE("schedule_lr peaks exactly at warmup and is monotone either side") {
  for (int64_t warmup : {100, 1000, 2000, 10000, 20000}) {
    LrSchedule sched{1.0, warmup};
    const double peak = schedule_lr(sched, warmup);
    double prev = 0.0;
    for (int64_t step = 1; step <= warmup; step += std::max<int64_t>(1, warmup / 50)) {
      const double lr = schedule_lr(sched, step);
      CHECK(lr >= prev);
      CHECK(lr <= peak + 1e-15);
      prev = lr;
    }
    prev = peak;
    for (int64_t step = warmup; step <= 4 * warmup; step += std::max<int64_t>(1, warmup / 25)) {
      const double lr = schedule_lr(sched, step);
      CHECK(lr <= prev + 1e-15);
      prev = lr;
    }
    CHECK(schedule_lr(sched, warmup) > schedule_lr(sched, warmup - 1));
    CHECK(schedule_lr(sched, warmup) > schedule_lr(sched, warmup + 1));
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Tensor p({3}, {1.0f, -2.0f, 3.0f}, true);
  p.grad();  // populated zeros
  Adam adam({p});
  adam.step(0.1);
  CHECK(p.data()[0] == doctest::Approx(1.0));
  CHECK(p.data()[1] == doctest::Approx(-2.0));
  CHECK(p.data()[2] == doctest::Approx(3.0));
  CHECK(adam.state().step == 1);
}

TEST_CASE("adam first-step delta with unit gradient is about -lr") {
  Tensor p({1}, {0.5f}, true);
  p.grad()[0] = 1.0f;
  Adam adam({p});
  adam.step(0.1);
  CHECK(p.data()[0] == doctest::Approx(0.5 - 0.09999999900000009).epsilon(1e-6));
  // gradients zeroed afterward
  CHECK(p.grad_view()[0] == 0.0f);
}

TEST_CASE("adam missing gradient is a contract error") {
  Tensor p({2}, 0.0f, true);
  Adam adam({p});
  CHECK_THROWS_AS(adam.step(0.1), ContractError);
}

TEST_CASE("adam drives f(x)=x^2 toward zero") {
  Tensor x({1}, {5.0f}, true);
  Adam adam({x});
  float prev_abs = 5.0f;
  int non_decreasing = 0;
  for (int step = 0; step < 100; ++step) {
    Tensor loss = mul(x, x);
    loss.backward();
    adam.step(0.1);
    const float a = std::abs(x.data()[0]);
    if (a > prev_abs) ++non_decreasing;
    prev_abs = a;
  }
  CHECK(std::abs(x.data()[0]) < 5.0f);
  CHECK(std::abs(x.data()[0]) < 1.0f);
  CHECK(non_decreasing < 20);  // strictly decreasing trend overall
}

TEST_CASE("checkpoint container round-trips tensors and adam state") {
  const std::string path = (std::filesystem::temp_directory_path() / "vtlab_ckpt_test.vtl").string();
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b({4}, {0.5f, -0.5f, 0.25f, 0.0f}, true);
  NamedParams params = {{"layer.a", a}, {"layer.b", b}};
  AdamState adam;
  adam.step = 17;
  adam.beta1 = 0.9;
  adam.beta2 = 0.999;
  adam.epsilon = 1e-8;
  adam.first_moment = {{1, 1, 1, 1, 1, 1}, {2, 2, 2, 2}};
  adam.second_moment = {{3, 3, 3, 3, 3, 3}, {4, 4, 4, 4}};
  save_checkpoint(path, "ptrnet", 1234, params, &adam);

  Checkpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.family == "ptrnet");
  CHECK(ckpt.step == 1234);
  CHECK(ckpt.order == std::vector<std::string>{"layer.a", "layer.b"});
  CHECK(ckpt.entries.at("layer.a").shape == std::vector<size_t>{2, 3});
  CHECK(ckpt.entries.at("layer.a").data == a.data());
  REQUIRE(ckpt.adam.has_value());
  CHECK(ckpt.adam->step == 17);
  CHECK(ckpt.adam->first_moment[1] == adam.first_moment[1]);

  Tensor a2({2, 3}, 0.0f, true);
  Tensor b2({4}, 0.0f, true);
  NamedParams dest = {{"layer.a", a2}, {"layer.b", b2}};
  load_into(ckpt, dest, true);
  CHECK(a2.data() == a.data());
  CHECK(b2.data() == b.data());

  SUBCASE("strict load fails on missing tensors, relaxed skips them") {
    Tensor c({2}, 0.0f, true);
    NamedParams extra = {{"layer.a", a2}, {"layer.missing", c}};
    CHECK_THROWS_AS(load_into(ckpt, extra, true), DataError);
    const auto loaded = load_into(ckpt, extra, false);
    CHECK(loaded == std::vector<std::string>{"layer.a"});
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint starts with the VTL1 magic") {
  const std::string path = (std::filesystem::temp_directory_path() / "vtlab_magic.vtl").string();
  Tensor a({1}, {1.0f}, true);
  NamedParams params = {{"x", a}};
  save_checkpoint(path, "seq2seq", 1, params);
  FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f);
  char magic[4];
  REQUIRE(std::fread(magic, 1, 4, f) == 4);
  std::fclose(f);
  CHECK(std::string(magic, 4) == "VTL1");
  std::filesystem::remove(path);
}
