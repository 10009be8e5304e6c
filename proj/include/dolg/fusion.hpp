// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <string>
#include <vector>

#include "dolg/global_branch.hpp"
#include "dolg/layers.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

enum class FusionMode { Orthogonal, Concatenation, Hadamard };

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "orthogonal") return FusionMode::Orthogonal;
  if (s == "concatenation" || s == "concat") return FusionMode::Concatenation;
  if (s == "hadamard") return FusionMode::Hadamard;
  throw config_error("unknown fusion mode: " + s);
}

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Orthogonal: return "orthogonal";
    case FusionMode::Concatenation: return "concatenation";
    case FusionMode::Hadamard: return "hadamard";
  }
  return "?";
}

constexpr double kDegenerateGlobalSq = 1e-12;

/// Projection of `point` onto the global descriptor:
/// (point.g / |g|^2) g. Errors out when |g|^2 is numerically zero.
inline Tensor project(const Tensor& point, const Tensor& f_g) {
  if (point.numel() != f_g.numel())
    throw shape_error("project: size mismatch " + point.shape_str() + " vs " + f_g.shape_str());
  const double q = squared_norm(f_g);
  if (q < kDegenerateGlobalSq)
    throw degenerate_global_error("project: |f_g|^2 = " + std::to_string(q) + " below 1e-12");
  const double coef = dot(point, f_g) / q;
  Tensor out(f_g.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = coef * f_g[i];
  return out;
}

/// Per-position orthogonal residual: f_l[:,i,j] - project(f_l[:,i,j], f_g).
inline Tensor orthogonal_component(const Tensor& f_l, const Tensor& f_g) {
  if (f_l.rank() != 3 || f_g.rank() != 1 || f_l.dim(0) != f_g.numel())
    throw shape_error("orthogonal_component: expected (C,H,W) and (C), got " + f_l.shape_str() +
                      " and " + f_g.shape_str());
  const double q = squared_norm(f_g);
  if (q < kDegenerateGlobalSq)
    throw degenerate_global_error("orthogonal_component: |f_g|^2 below 1e-12");
  const std::size_t c = f_l.dim(0), hw = f_l.dim(1) * f_l.dim(2);
  Tensor out(f_l.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) s += f_l[ch * hw + p] * f_g[ch];
    const double coef = s / q;
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + p] = f_l[ch * hw + p] - coef * f_g[ch];
  }
  return out;
}

/// Orthogonal components with f_g appended at every position: (2C,H,W).
inline Tensor make_fused_tensor(const Tensor& f_l, const Tensor& f_g) {
  Tensor orth = orthogonal_component(f_l, f_g);
  const std::size_t c = f_l.dim(0), h = f_l.dim(1), w = f_l.dim(2), hw = h * w;
  Tensor out({2 * c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) {
      out[ch * hw + p] = orth[ch * hw + p];
      out[(c + ch) * hw + p] = f_g[ch];
    }
  return out;
}

/// Spatial aggregation of a rank-3 tensor per the configured method.
inline Tensor aggregate(const Tensor& tensor, PoolMethod method, const GemConfig& gem = GemConfig{}) {
  if (method == PoolMethod::Average) return average_pool(tensor);
  return gem_pool(tensor, gem);
}

/// Orthogonal fusion head. Takes the local tensors (one per fused location)
/// and the global descriptor, builds the fused representation per the
/// configured mode, aggregates spatially, and maps to the 512-d output.
class FusionHead {
 public:
  static constexpr std::size_t kOutputDim = 512;

  void build(Rng& rng, std::size_t embed, std::size_t n_locals, FusionMode mode, PoolMethod pool,
             GemConfig gem) {
    mode_ = mode;
    pool_ = pool;
    gem_ = gem;
    n_locals_ = n_locals;
    if (mode == FusionMode::Hadamard && n_locals != 1)
      throw config_error("fusion: hadamard mode requires a single fusion location");
    std::size_t in_dim = 0;
    switch (mode) {
      case FusionMode::Orthogonal:
      case FusionMode::Concatenation: in_dim = (n_locals + 1) * embed; break;
      case FusionMode::Hadamard: in_dim = embed; break;
    }
    fc_.init(rng, kOutputDim, in_dim, /*bias=*/true);
  }

  void collect(std::vector<Parameter*>& out) { fc_.collect("fusion.fc", out); }

  /// One batch item per call: `f_locals` holds the local tensor from each
  /// fused tap point. When `fc_leaf` is supplied the affine weights are shared
  /// across a batch.
  Var forward(Tape& t, const std::vector<Var>& f_locals, Var f_g,
              std::optional<std::pair<Var, std::optional<Var>>> fc_leaf = std::nullopt) {
    auto apply_fc = [&](Var v) {
      if (fc_leaf) return ad::linear(v, fc_leaf->first, fc_leaf->second);
      return fc_.forward(t, v);
    };
    if (f_locals.size() != n_locals_) throw shape_error("fusion: wrong number of local tensors");
    if (mode_ == FusionMode::Hadamard) {
      Var pooled = aggregate_var(f_locals[0]);
      return apply_fc(ad::hadamard(pooled, f_g));
    }
    // Build [component_0 ; ... ; f_g] per position, then aggregate. In
    // orthogonal mode each local tensor is first decomposed against f_g.
    std::vector<Var> pooled_parts;
    pooled_parts.reserve(f_locals.size() + 1);
    for (Var f_l : f_locals) {
      Var part = mode_ == FusionMode::Orthogonal ? ad::orthogonalize_map(f_l, f_g) : f_l;
      const Tensor& pv = part.value();
      Var fused = ad::concat0({part, ad::broadcast_map(f_g, pv.dim(1), pv.dim(2))});
      Var vec = aggregate_var(fused);
      pooled_parts.push_back(vec);
    }
    Var joined;
    if (pooled_parts.size() == 1) {
      joined = pooled_parts[0];
    } else {
      // multiple tap points: keep one copy of the pooled f_g block
      std::vector<Var> pieces;
      const std::size_t embed = f_g.value().numel();
      for (std::size_t i = 0; i < pooled_parts.size(); ++i)
        pieces.push_back(slice_head(t, pooled_parts[i], embed));
      pieces.push_back(slice_tail(t, pooled_parts[0], embed));
      joined = ad::concat0(pieces);
    }
    return apply_fc(joined);
  }

  std::vector<Var> forward_batch(Tape& t, const std::vector<std::vector<Var>>& f_locals_per_item,
                                 const std::vector<Var>& f_gs) {
    Var wv = t.use(fc_.w);
    std::optional<Var> bv;
    if (fc_.has_bias) bv = t.use(fc_.b);
    std::vector<Var> out;
    out.reserve(f_gs.size());
    for (std::size_t i = 0; i < f_gs.size(); ++i)
      out.push_back(forward(t, f_locals_per_item[i], f_gs[i], std::make_pair(wv, bv)));
    return out;
  }

  FusionMode mode() const { return mode_; }
  PoolMethod pool() const { return pool_; }
  LinearLayer& fc() { return fc_; }

 private:
  Var aggregate_var(Var x) {
    return pool_ == PoolMethod::Average ? ad::spatial_mean(x) : ad::gem_pool_op(x, gem_.p, gem_.epsilon);
  }

  static Var slice_head(Tape& t, Var v, std::size_t n) { return slice(t, v, 0, n); }
  static Var slice_tail(Tape& t, Var v, std::size_t n) {
    return slice(t, v, v.value().numel() - n, n);
  }

  static Var slice(Tape& t, Var v, std::size_t start, std::size_t n) {
    Tensor y({n});
    for (std::size_t i = 0; i < n; ++i) y[i] = v.value()[start + i];
    ad::Node* vn = v.node();
    ad::Node* node = t.make(std::move(y));
    node->backward = [vn, start, n](const ad::Node& self) {
      for (std::size_t i = 0; i < n; ++i) vn->grad[start + i] += self.grad[i];
    };
    return Var(node, &t);
  }

  FusionMode mode_ = FusionMode::Orthogonal;
  PoolMethod pool_ = PoolMethod::Average;
  GemConfig gem_;
  std::size_t n_locals_ = 1;
  LinearLayer fc_;
};

}  // namespace dolg
