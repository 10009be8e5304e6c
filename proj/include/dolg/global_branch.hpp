// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dolg/layers.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

enum class PoolMethod { Average, Gem };

inline PoolMethod parse_pool_method(const std::string& s) {
  if (s == "average" || s == "avg") return PoolMethod::Average;
  if (s == "gem") return PoolMethod::Gem;
  throw config_error("unknown pooling method: " + s);
}

inline std::string to_string(PoolMethod m) {
  return m == PoolMethod::Average ? "average" : "gem";
}

struct GemConfig {
  double p = 3.0;
  double epsilon = 1e-6;

  void validate() const {
    if (!(p > 0.0)) throw config_error("gem: exponent p must be > 0");
    if (!(epsilon > 0.0)) throw config_error("gem: epsilon must be > 0");
  }
};

/// Generalized-mean pooling of a (C,H,W) map to a length-C vector:
/// y_c = (mean_ij max(x_cij, eps)^p)^(1/p).
inline Tensor gem_pool(const Tensor& map, const GemConfig& cfg) {
  cfg.validate();
  if (map.rank() != 3) throw shape_error("gem_pool: input must be rank-3, got " + map.shape_str());
  if (!map.all_finite()) throw invalid_input_error("gem_pool: non-finite input");
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  if (hw == 0) throw invalid_input_error("gem_pool: empty spatial extent");
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += std::pow(std::max(map[ch * hw + i], cfg.epsilon), cfg.p);
    out[ch] = std::pow(s / static_cast<double>(hw), 1.0 / cfg.p);
  }
  return out;
}

inline Tensor average_pool(const Tensor& map) {
  if (map.rank() != 3) throw shape_error("average_pool: input must be rank-3");
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  if (hw == 0) throw invalid_input_error("average_pool: empty spatial extent");
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += map[ch * hw + i];
    out[ch] = s / static_cast<double>(hw);
  }
  return out;
}

/// GeM (or average) pooling of f4 followed by an FC reduction to the
/// embedding width C. No normalization here; the loss and the extractor
/// normalize explicitly.
class GlobalBranch {
 public:
  void build(Rng& rng, std::size_t c4, std::size_t embed, PoolMethod pool, GemConfig gem) {
    gem.validate();
    pool_ = pool;
    gem_ = gem;
    reduce_.init(rng, embed, c4, /*bias=*/true);
  }

  void collect(std::vector<Parameter*>& out) { reduce_.collect("global.reduce", out); }

  Var forward(Tape& t, Var f4) {
    Var pooled = pool_ == PoolMethod::Gem ? ad::gem_pool_op(f4, gem_.p, gem_.epsilon)
                                          : ad::spatial_mean(f4);
    return reduce_.forward(t, pooled);
  }

  std::vector<Var> forward_batch(Tape& t, const std::vector<Var>& f4s) {
    std::vector<Var> pooled;
    pooled.reserve(f4s.size());
    for (Var f4 : f4s)
      pooled.push_back(pool_ == PoolMethod::Gem ? ad::gem_pool_op(f4, gem_.p, gem_.epsilon)
                                                : ad::spatial_mean(f4));
    return reduce_.forward_batch(t, pooled);
  }

  PoolMethod pool() const { return pool_; }
  const GemConfig& gem() const { return gem_; }
  LinearLayer& reduce() { return reduce_; }

 private:
  PoolMethod pool_ = PoolMethod::Gem;
  GemConfig gem_;
  LinearLayer reduce_;
};

}  // namespace dolg
