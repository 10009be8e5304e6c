// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#include "helpers.hpp"

#include "dolg/schedule.hpp"
#include "dolg/train.hpp"

using namespace dolg;

TEST_CASE("warmup ramp and cosine endpoints") {
  const long total = 100, warmup = 10;
  const double base = 0.05;
  REQUIRE(lr_at(0, total, warmup, base) == 0.0);                 // ramp start
  REQUIRE(lr_at(warmup, total, warmup, base) == base);           // end of warmup
  REQUIRE(lr_at(total - 1, total, warmup, base) == 0.0);         // cosine endpoint
  REQUIRE(lr_at(5, total, warmup, base) == base * 0.5);          // linear ramp
}

TEST_CASE("schedule is continuous at the warmup/cosine boundary") {
  const long total = 200, warmup = 25;
  const double base = 0.05;
  const double step_gap = std::abs(lr_at(warmup, total, warmup, base) -
                                   lr_at(warmup - 1, total, warmup, base));
  REQUIRE(step_gap <= base / static_cast<double>(warmup) + 1e-12);
}

TEST_CASE("cosine segment decays monotonically to zero") {
  const long total = 60, warmup = 5;
  double prev = lr_at(warmup, total, warmup, 0.05);
  for (long s = warmup + 1; s < total; ++s) {
    const double cur = lr_at(s, total, warmup, 0.05);
    REQUIRE(cur <= prev + 1e-15);
    prev = cur;
  }
  REQUIRE(prev == 0.0);
}

TEST_CASE("schedule argument validation") {
  REQUIRE_THROWS_AS(lr_at(-1, 10, 2, 0.05), index_error);
  REQUIRE_THROWS_AS(lr_at(10, 10, 2, 0.05), index_error);
  REQUIRE_THROWS_AS(lr_at(0, 10, 10, 0.05), config_error);
  REQUIRE_THROWS_AS(lr_at(0, 0, 0, 0.05), config_error);
}

TEST_CASE("config-level schedule converts warmup epochs to steps") {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.warmup_epochs = 2;
  cfg.base_lr = 0.04;
  // 10 epochs x 7 steps each
  const long total = 70;
  REQUIRE(lr_at(14, total, cfg) == 0.04);  // first step after 2 warmup epochs
  REQUIRE(lr_at(0, total, cfg) == 0.0);
  REQUIRE(lr_at(total - 1, total, cfg) == 0.0);
}

TEST_CASE("zero warmup starts at base_lr") {
  REQUIRE(lr_at(0, 50, 0, 0.05) == 0.05);
}
