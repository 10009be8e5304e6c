// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#include "helpers.hpp"

#include <cmath>

#include "dolg/fusion.hpp"
#include "dolg/gradcheck.hpp"
#include "dolg/selftest.hpp"

using namespace dolg;

TEST_CASE("projection onto the global descriptor") {
  const Tensor g = Tensor::vector({1.0, 0.0});
  REQUIRE(project(Tensor::vector({3.0, 4.0}), g)[0] == 3.0);
  REQUIRE(project(Tensor::vector({3.0, 4.0}), g)[1] == 0.0);
  // orthogonal point projects to zero
  const Tensor p0 = project(Tensor::vector({0.0, 7.0}), g);
  REQUIRE(p0[0] == 0.0);
  REQUIRE(p0[1] == 0.0);
  // parallel point projects to itself exactly
  Rng rng(1);
  const Tensor g2 = rng.normal_tensor({16}, 1.0);
  Tensor point(g2.shape());
  for (std::size_t i = 0; i < 16; ++i) point[i] = 2.0 * g2[i];
  const Tensor proj = project(point, g2);
  for (std::size_t i = 0; i < 16; ++i) REQUIRE(proj[i] == point[i]);
}

TEST_CASE("orthogonal component per position") {
  const Tensor g = Tensor::vector({1.0, 0.0});
  Tensor f_l({2, 1, 1});
  f_l[0] = 3.0;
  f_l[1] = 4.0;
  const Tensor orth = orthogonal_component(f_l, g);
  REQUIRE(orth[0] == 0.0);
  REQUIRE(orth[1] == 4.0);

  // every position parallel to f_g gives the zero tensor
  Rng rng(2);
  const Tensor g2 = rng.normal_tensor({8}, 1.0);
  Tensor par({8, 2, 2});
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t p = 0; p < 4; ++p) par[c * 4 + p] = (0.5 + static_cast<double>(p)) * g2[c];
  const Tensor o2 = orthogonal_component(par, g2);
  for (std::size_t i = 0; i < o2.numel(); ++i)
    REQUIRE_THAT(o2[i], Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("degenerate global descriptor raises") {
  const Tensor g({4});
  REQUIRE_THROWS_AS(project(Tensor::vector({1.0, 2.0, 3.0, 4.0}), g), degenerate_global_error);
  REQUIRE_THROWS_AS(orthogonal_component(Tensor({4, 2, 2}), g), degenerate_global_error);
}

TEST_CASE("decomposition invariants: idempotence, pythagoras, scale equivariance") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t c = 4 + rng.index(12);
    const Tensor f_l = rng.normal_tensor({c, 2, 2}, 1.0);
    const Tensor g = rng.normal_tensor({c}, 1.0);

    const Tensor once = orthogonal_component(f_l, g);
    const Tensor twice = orthogonal_component(once, g);
    for (std::size_t i = 0; i < once.numel(); ++i)
      REQUIRE(std::abs(twice[i] - once[i]) <= 1e-6 * std::max(1.0, std::abs(once[i])));

    for (std::size_t p = 0; p < 4; ++p) {
      Tensor point({c}), orth_p({c});
      for (std::size_t ch = 0; ch < c; ++ch) {
        point[ch] = f_l[ch * 4 + p];
        orth_p[ch] = once[ch * 4 + p];
      }
      const Tensor proj = project(point, g);
      const double lhs = squared_norm(point);
      const double rhs = squared_norm(proj) + squared_norm(orth_p);
      REQUIRE(testutil::rel_diff(lhs, rhs) <= 1e-6);
    }

    // scaling f_g by alpha > 0 changes neither projection nor residual
    const double alpha = rng.uniform(0.1, 10.0);
    Tensor g_scaled(g.shape());
    for (std::size_t i = 0; i < c; ++i) g_scaled[i] = alpha * g[i];
    const Tensor o_scaled = orthogonal_component(f_l, g_scaled);
    for (std::size_t i = 0; i < once.numel(); ++i)
      REQUIRE(std::abs(o_scaled[i] - once[i]) <= 1e-9 * std::max(1.0, std::abs(once[i])));
  }
}

TEST_CASE("fused tensor layout: residuals plus a broadcast global block") {
  Rng rng(4);
  const Tensor f_l = rng.normal_tensor({6, 3, 2}, 1.0);
  const Tensor g = rng.normal_tensor({6}, 1.0);
  const Tensor fused = make_fused_tensor(f_l, g);
  REQUIRE(fused.shape() == std::vector<std::size_t>{12, 3, 2});
  const double gnorm = norm(g);
  for (std::size_t p = 0; p < 6; ++p) {
    double d = 0.0;
    for (std::size_t c = 0; c < 6; ++c) d += fused[c * 6 + p] * g[c];
    REQUIRE(std::abs(d) <= 1e-10 * gnorm);
    for (std::size_t c = 0; c < 6; ++c) REQUIRE(fused[(6 + c) * 6 + p] == g[c]);
  }
}

TEST_CASE("aggregate: average of a constant, gem p=1, gem p=3 oracle") {
  Rng rng(5);
  const Tensor constant = Tensor::full({3, 2, 2}, 0.75);
  const Tensor avg = aggregate(constant, PoolMethod::Average);
  for (std::size_t c = 0; c < 3; ++c) REQUIRE(avg[c] == 0.75);

  const Tensor map = rng.uniform_tensor({3, 3, 3}, 0.1, 1.2);
  const Tensor g1 = aggregate(map, PoolMethod::Gem, GemConfig{1.0, 1e-6});
  const Tensor a1 = aggregate(map, PoolMethod::Average);
  for (std::size_t c = 0; c < 3; ++c) REQUIRE(testutil::rel_diff(g1[c], a1[c]) <= 1e-12);

  const Tensor g3 = aggregate(map, PoolMethod::Gem, GemConfig{3.0, 1e-6});
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 9; ++i) s += std::pow(map[c * 9 + i], 3.0);
    REQUIRE_THAT(g3[c], Catch::Matchers::WithinRel(std::cbrt(s / 9.0), 1e-12));
  }
}

TEST_CASE("fusion head output is 512-d in every mode") {
  Rng rng(6);
  for (FusionMode mode : {FusionMode::Orthogonal, FusionMode::Concatenation, FusionMode::Hadamard}) {
    FusionHead head;
    Rng hr(7);
    head.build(hr, 8, 1, mode, PoolMethod::Average, GemConfig{});
    ad::Tape t;
    ad::Var out = head.forward(t, {t.leaf(rng.normal_tensor({8, 3, 3}, 1.0))},
                               t.leaf(rng.normal_tensor({8}, 1.0)));
    REQUIRE(out.value().shape() == std::vector<std::size_t>{512});
    REQUIRE(out.value().all_finite());
  }
}

TEST_CASE("single-position orthogonal fusion equals the affine map of [residual; f_g]") {
  Rng rng(8);
  FusionHead head;
  Rng hr(9);
  head.build(hr, 6, 1, FusionMode::Orthogonal, PoolMethod::Average, GemConfig{});
  const Tensor f_l = rng.normal_tensor({6, 1, 1}, 1.0);
  const Tensor g = rng.normal_tensor({6}, 1.0);
  ad::Tape t;
  const Tensor got = head.forward(t, {t.leaf(f_l)}, t.leaf(g)).value();

  Tensor point({6});
  for (std::size_t c = 0; c < 6; ++c) point[c] = f_l[c];
  const Tensor proj = project(point, g);
  Tensor vec({12});
  for (std::size_t c = 0; c < 6; ++c) {
    vec[c] = point[c] - proj[c];
    vec[6 + c] = g[c];
  }
  const Tensor expect = head.fc().apply(vec);
  REQUIRE(max_abs_diff(got, expect) <= 1e-9);
}

TEST_CASE("concatenation mode skips orthogonalization; hadamard multiplies pooled features") {
  Rng rng(10);
  const Tensor f_l = rng.normal_tensor({5, 2, 3}, 1.0);
  const Tensor g = rng.normal_tensor({5}, 1.0);

  {
    FusionHead head;
    Rng hr(11);
    head.build(hr, 5, 1, FusionMode::Concatenation, PoolMethod::Average, GemConfig{});
    ad::Tape t;
    const Tensor got = head.forward(t, {t.leaf(f_l)}, t.leaf(g)).value();
    const Tensor pooled = average_pool(f_l);
    Tensor vec({10});
    for (std::size_t c = 0; c < 5; ++c) {
      vec[c] = pooled[c];
      vec[5 + c] = g[c];
    }
    REQUIRE(max_abs_diff(got, head.fc().apply(vec)) <= 1e-9);
  }
  {
    FusionHead head;
    Rng hr(12);
    head.build(hr, 5, 1, FusionMode::Hadamard, PoolMethod::Average, GemConfig{});
    ad::Tape t;
    const Tensor got = head.forward(t, {t.leaf(f_l)}, t.leaf(g)).value();
    const Tensor pooled = average_pool(f_l);
    Tensor vec({5});
    for (std::size_t c = 0; c < 5; ++c) vec[c] = pooled[c] * g[c];
    REQUIRE(max_abs_diff(got, head.fc().apply(vec)) <= 1e-9);
  }
  // hadamard cannot fuse two tap points
  FusionHead bad;
  Rng hr(13);
  REQUIRE_THROWS_AS(bad.build(hr, 5, 2, FusionMode::Hadamard, PoolMethod::Average, GemConfig{}),
                    config_error);
}

TEST_CASE("two-location fusion concatenates both residual blocks with one global block") {
  Rng rng(14);
  FusionHead head;
  Rng hr(15);
  head.build(hr, 4, 2, FusionMode::Orthogonal, PoolMethod::Average, GemConfig{});
  ad::Tape t;
  // different spatial dims per tap point
  ad::Var out = head.forward(
      t, {t.leaf(rng.normal_tensor({4, 3, 3}, 1.0)), t.leaf(rng.normal_tensor({4, 2, 2}, 1.0))},
      t.leaf(rng.normal_tensor({4}, 1.0)));
  REQUIRE(out.value().shape() == std::vector<std::size_t>{512});
  REQUIRE(out.value().all_finite());
}

TEST_CASE("pooled-fusion identity holds with average aggregation") {
  const CheckResult r = selftest::check_pooled_fusion_identity(40);
  INFO(r.detail);
  REQUIRE(r.pass);
}

TEST_CASE("fusion gradients match finite differences in all modes") {
  Rng rng(16);
  for (FusionMode mode : {FusionMode::Orthogonal, FusionMode::Concatenation, FusionMode::Hadamard}) {
    FusionHead head;
    Rng hr(17);
    head.build(hr, 6, 1, mode, PoolMethod::Average, GemConfig{});
    std::vector<Parameter*> params;
    head.collect(params);
    ad::Parameter f_l("f_l", rng.normal_tensor({6, 2, 2}, 1.0));
    ad::Parameter g("f_g", rng.normal_tensor({6}, 1.0));
    params.push_back(&f_l);
    params.push_back(&g);
    const Tensor wts = rng.normal_tensor({512}, 1.0);
    const auto rep = check_gradients(
        [&](ad::Tape& t) {
          return ad::weighted_sum(head.forward(t, {t.use(f_l)}, t.use(g)), wts);
        },
        params);
    INFO("mode " << to_string(mode) << ": " << rep.worst);
    REQUIRE(rep.ok(1e-4));
  }
}

TEST_CASE("fusion head with a zero global vector stays finite via the stabilizer") {
  Rng rng(18);
  FusionHead head;
  Rng hr(19);
  head.build(hr, 4, 1, FusionMode::Orthogonal, PoolMethod::Average, GemConfig{});
  ad::Tape t;
  ad::Var out = head.forward(t, {t.leaf(rng.normal_tensor({4, 2, 2}, 1.0))}, t.leaf(Tensor({4})));
  REQUIRE(out.value().all_finite());
}
