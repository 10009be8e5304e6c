// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dolg/arcface.hpp"
#include "dolg/evaluation.hpp"
#include "dolg/extraction.hpp"
#include "dolg/fusion.hpp"
#include "dolg/global_branch.hpp"
#include "dolg/gradcheck.hpp"
#include "dolg/local_branch.hpp"
#include "dolg/model.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace selftest {

inline double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Random local/global pairs: every position of the orthogonal component must
/// be orthogonal to the global descriptor within 1e-5 relative.
inline CheckResult check_orthogonality(std::size_t total_pairs = 1000) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{"orthogonality-residuals", true, "", 0.0};
  Rng rng(7);
  const std::vector<std::size_t> dims = {4, 64, 1024};
  std::size_t done = 0, positions = 0;
  double worst = 0.0;
  for (std::size_t d = 0; d < dims.size(); ++d) {
    const std::size_t c = dims[d];
    const std::size_t n = total_pairs / dims.size() + (d < total_pairs % dims.size() ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i, ++done) {
      const std::size_t h = 1 + rng.index(3), w = 1 + rng.index(3);
      const Tensor f_l = rng.normal_tensor({c, h, w}, 1.0);
      const Tensor f_g = rng.normal_tensor({c}, 1.0);
      const Tensor orth = orthogonal_component(f_l, f_g);
      const double gnorm = norm(f_g);
      const std::size_t hw = h * w;
      for (std::size_t p = 0; p < hw; ++p) {
        double d_og = 0.0, n_l = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          d_og += orth[ch * hw + p] * f_g[ch];
          n_l += f_l[ch * hw + p] * f_l[ch * hw + p];
        }
        n_l = std::sqrt(n_l);
        const double bound = 1e-5 * n_l * gnorm;
        worst = std::max(worst, std::abs(d_og) / std::max(bound, 1e-300));
        if (std::abs(d_og) > bound) r.pass = false;
        ++positions;
      }
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu pairs, %zu positions, worst residual %.2e of the bound",
                done, positions, worst);
  r.detail = buf;
  r.seconds = elapsed_since(t0);
  return r;
}

/// With average aggregation, orthogonal fusion equals the pooled shortcut
/// Pool(f_l) - (Pool(f_l).f_g) f_g / |f_g|^2 concatenated with f_g and mapped
/// by the same affine layer.
inline CheckResult check_pooled_fusion_identity(std::size_t instances = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{"pooled-fusion-identity", true, "", 0.0};
  Rng rng(11);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t c = 4u << rng.index(3);  // 4, 8, 16
    const std::size_t h = 1 + rng.index(4), w = 1 + rng.index(4);
    const Tensor f_l = rng.normal_tensor({c, h, w}, 1.0);
    const Tensor f_g = rng.normal_tensor({c}, 1.0);
    LinearLayer fc;
    fc.init(rng, 512, 2 * c, true);

    // full path: orthogonalize per position, append f_g, average, affine
    const Tensor full_vec = aggregate(make_fused_tensor(f_l, f_g), PoolMethod::Average);
    const Tensor full = fc.apply(full_vec);

    // pooled shortcut
    const Tensor pooled = average_pool(f_l);
    const Tensor proj = project(pooled, f_g);
    Tensor short_vec({2 * c});
    for (std::size_t k = 0; k < c; ++k) {
      short_vec[k] = pooled[k] - proj[k];
      short_vec[c + k] = f_g[k];
    }
    const Tensor shortcut = fc.apply(short_vec);

    Tensor diff({512});
    for (std::size_t k = 0; k < 512; ++k) diff[k] = full[k] - shortcut[k];
    const double rel = norm(diff) / std::max({norm(full), norm(shortcut), 1e-12});
    worst = std::max(worst, rel);
    if (rel > 1e-5) r.pass = false;
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%zu instances, worst relative difference %.2e", instances, worst);
  r.detail = buf;
  r.seconds = elapsed_since(t0);
  return r;
}

/// GeM with p=1 is average pooling; GeM with p=64 approaches the per-channel
/// maximum on maps with distinct entries.
inline CheckResult check_pooling_identities() {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{"pooling-identities", true, "", 0.0};
  Rng rng(13);
  double worst_p1 = 0.0, worst_p64 = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.index(4), h = 2 + rng.index(3), w = 2 + rng.index(3);
    const Tensor map = rng.uniform_tensor({c, h, w}, 0.1, 1.5);

    GemConfig g1{1.0, 1e-6};
    const Tensor gem1 = gem_pool(map, g1);
    const Tensor avg = average_pool(map);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double rel = std::abs(gem1[ch] - avg[ch]) / std::max(std::abs(avg[ch]), 1e-12);
      worst_p1 = std::max(worst_p1, rel);
      if (rel > 1e-12) r.pass = false;
    }

    GemConfig g64{64.0, 1e-6};
    const Tensor gem64 = gem_pool(map, g64);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mx = 0.0;
      for (std::size_t i = 0; i < h * w; ++i) mx = std::max(mx, map[ch * h * w + i]);
      const double rel = std::abs(gem64[ch] - mx) / mx;
      worst_p64 = std::max(worst_p64, rel);
      if (rel > 0.05) r.pass = false;
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "p=1 worst rel %.2e; p=64 worst rel to max %.4f", worst_p1,
                worst_p64);
  r.detail = buf;
  r.seconds = elapsed_since(t0);
  return r;
}

/// Analytic gradients vs central finite differences for the GeM pool, the
/// local branch, orthogonal fusion, and the margin loss.
inline CheckResult check_gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{"gradient-checks", true, "", 0.0};
  Rng rng(17);
  std::string detail;
  const double tol = 1e-4;

  auto fold = [&](const char* name, const GradCheckReport& rep) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s max rel err %.2e over %zu coords; ", name, rep.max_rel_err,
                  rep.checked);
    detail += buf;
    if (!rep.ok(tol)) {
      r.pass = false;
      detail += "worst: " + rep.worst + "; ";
    }
  };

  {  // GeM, p = 3, inputs bounded away from the clamp
    ad::Parameter x("x", rng.uniform_tensor({3, 4, 5}, 0.1, 2.0));
    const Tensor wts = rng.normal_tensor({3}, 1.0);
    fold("gem", check_gradients(
                    [&](ad::Tape& t) {
                      return ad::weighted_sum(ad::gem_pool_op(t.use(x), 3.0, 1e-6), wts);
                    },
                    {&x}));
  }
  {  // local branch end to end, inference mode (running statistics)
    MultiAtrousConfig cfg;
    cfg.out_channels = 8;
    cfg.mid_channels = 4;
    LocalBranch branch;
    branch.build(rng, 6, cfg, true, true, false);
    std::vector<ad::Parameter*> params;
    branch.collect("local", params);
    ad::Parameter x("x", rng.normal_tensor({6, 5, 4}, 0.7));
    params.push_back(&x);
    const Tensor wts = rng.normal_tensor({8, 5, 4}, 1.0);
    fold("local-branch", check_gradients(
                             [&](ad::Tape& t) {
                               return ad::weighted_sum(branch.forward(t, t.use(x)).first, wts);
                             },
                             params));
  }
  {  // local branch end to end, training mode (batch statistics)
    MultiAtrousConfig cfg;
    cfg.out_channels = 8;
    cfg.mid_channels = 4;
    LocalBranch branch;
    Rng br(18);
    branch.build(br, 6, cfg, true, true, false);
    std::vector<ad::Parameter*> params;
    branch.collect("local", params);
    ad::Parameter x0("x0", rng.normal_tensor({6, 3, 4}, 0.7));
    ad::Parameter x1("x1", rng.normal_tensor({6, 3, 4}, 0.7));
    params.push_back(&x0);
    params.push_back(&x1);
    const Tensor w0 = rng.normal_tensor({8, 3, 4}, 1.0);
    const Tensor w1 = rng.normal_tensor({8, 3, 4}, 1.0);
    fold("local-branch-batch",
         check_gradients(
             [&](ad::Tape& t) {
               auto outs = branch.forward_batch(t, {t.use(x0), t.use(x1)}, /*training=*/true);
               return ad::mean_scalars(
                   {ad::weighted_sum(outs[0], w0), ad::weighted_sum(outs[1], w1)});
             },
             params));
  }
  {  // orthogonal fusion end to end (w.r.t. f_l, f_g, affine params)
    FusionHead head;
    Rng hr(19);
    head.build(hr, 8, 1, FusionMode::Orthogonal, PoolMethod::Average, GemConfig{});
    std::vector<ad::Parameter*> params;
    head.collect(params);
    ad::Parameter f_l("f_l", rng.normal_tensor({8, 3, 3}, 1.0));
    ad::Parameter f_g("f_g", rng.normal_tensor({8}, 1.0));
    params.push_back(&f_l);
    params.push_back(&f_g);
    const Tensor wts = rng.normal_tensor({512}, 1.0);
    fold("orthogonal-fusion",
         check_gradients(
             [&](ad::Tape& t) {
               return ad::weighted_sum(head.forward(t, {t.use(f_l)}, t.use(f_g)), wts);
             },
             params));
  }
  {  // margin loss w.r.t. descriptor and head weights
    ArcFaceHead head;
    head.margin = 0.15;
    head.scale = 30.0;
    Rng hr(23);
    head.init(hr, 4, 512);
    ad::Parameter desc("descriptor", rng.normal_tensor({512}, 0.1));
    fold("margin-loss", check_gradients(
                            [&](ad::Tape& t) { return head.loss(t, t.use(desc), 2); },
                            {&desc, &head.weights}));
  }

  r.detail = detail;
  r.seconds = elapsed_since(t0);
  return r;
}

/// Frozen unit values of the margin adjustment and the symmetric 2-class loss.
inline CheckResult check_arcface_units() {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{"arcface-units", true, "", 0.0};
  std::string detail;

  // groundtruth flag 0 leaves s untouched, bitwise
  Rng rng(29);
  for (int i = 0; i < 100; ++i) {
    const double s = rng.uniform(-1.0, 1.0);
    if (arcface_adjust(s, 0, 0.37) != s) r.pass = false;
    if (arcface_adjust(s, 1, 0.0) != s) r.pass = false;
  }

  // cos(0.15) for a saturated similarity, margin 0.15
  const double adjusted = arcface_adjust(1.0, 1, 0.15);
  const double expect_cos = 0.98877107793604228;  // cos(0.15), frozen high-precision value
  if (std::abs(adjusted - expect_cos) > 1e-10) r.pass = false;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "adjust(1,1,0.15)=%.15f (err %.1e); ", adjusted,
                std::abs(adjusted - expect_cos));
  detail += buf;

  // symmetric two-class loss with zero margin is ln 2
  ArcFaceHead head;
  head.margin = 0.0;
  head.scale = 30.0;
  Rng hr(31);
  head.init(hr, 2, 512);
  head.weights.value.fill(0.0);
  head.weights.value.at2(0, 0) = 1.0;
  head.weights.value.at2(1, 1) = 1.0;
  Tensor desc({512});
  desc[0] = 1.0;
  desc[1] = 1.0;
  ad::Tape t;
  const double loss = head.loss(t, t.leaf(desc), 0).value()[0];
  const double ln2 = 0.69314718055994531;
  std::snprintf(buf, sizeof(buf), "symmetric 2-class loss %.15f vs ln2 (err %.1e)", loss,
                std::abs(loss - ln2));
  detail += buf;
  if (std::abs(loss - ln2) > 1e-10) r.pass = false;

  r.detail = detail;
  r.seconds = elapsed_since(t0);
  return r;
}

/// Definition-level average-precision oracle: for every positive, rescan the
/// junk-filtered ranking to find its rank and the hit count at that rank.
inline double ap_bruteforce(const std::vector<std::string>& ranked,
                            const std::set<std::string>& positives,
                            const std::set<std::string>& junk) {
  double sum = 0.0;
  // walk positives in ranking order so the summation order matches the
  // closed-form definition exactly
  for (const std::string& target : ranked) {
    if (junk.count(target) || !positives.count(target)) continue;
    std::size_t rank_pos = 0, hits = 0;
    for (const std::string& id : ranked) {
      if (junk.count(id)) continue;
      ++rank_pos;
      if (positives.count(id)) ++hits;
      if (id == target) break;
    }
    sum += static_cast<double>(hits) / static_cast<double>(rank_pos);
  }
  return sum / static_cast<double>(positives.size());
}

inline CheckResult check_ap_oracle(std::size_t instances = 500) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{"average-precision-oracle", true, "", 0.0};
  Rng rng(37);
  std::size_t mismatches = 0, junk_violations = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = 2 + rng.index(19);  // n <= 20
    std::vector<std::string> ranked;
    for (std::size_t k = 0; k < n; ++k) ranked.push_back("item" + std::to_string(k));
    rng.shuffle(ranked);
    std::set<std::string> positives, junk;
    for (const std::string& id : ranked) {
      const std::size_t roll = rng.index(4);
      if (roll == 0) positives.insert(id);
      else if (roll == 1) junk.insert(id);
    }
    if (positives.empty()) positives.insert(ranked[rng.index(n)]);
    for (const std::string& p : positives) junk.erase(p);

    const auto got = average_precision(ranked, positives, junk);
    const double expect = ap_bruteforce(ranked, positives, junk);
    if (!got || *got != expect) {
      ++mismatches;
      r.pass = false;
    }

    // junk-removal invariance: dropping junk ids from the ranking must leave AP unchanged
    std::vector<std::string> pruned;
    for (const std::string& id : ranked)
      if (!junk.count(id)) pruned.push_back(id);
    const auto pruned_ap = average_precision(pruned, positives, std::set<std::string>{});
    if (!pruned_ap || *pruned_ap != *got) {
      ++junk_violations;
      r.pass = false;
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%zu instances, %zu oracle mismatches, %zu junk violations",
                instances, mismatches, junk_violations);
  r.detail = buf;
  r.seconds = elapsed_since(t0);
  return r;
}

}  // namespace selftest

/// The invariant suites behind `dolg selftest`.
inline std::vector<CheckResult> run_selftest() {
  return {
      selftest::check_orthogonality(),  selftest::check_pooled_fusion_identity(),
      selftest::check_pooling_identities(), selftest::check_gradient_suite(),
      selftest::check_arcface_units(),  selftest::check_ap_oracle(),
  };
}

}  // namespace dolg
