// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <string>
#include <vector>

#include "dolg/layers.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

struct MultiAtrousConfig {
  std::array<int, 3> dilation_rates{3, 6, 9};
  std::size_t mid_channels = 0;  // 0 = out_channels / 2
  std::size_t out_channels = 0;  // = embedding width C
  int kernel_size = 3;

  void validate() const {
    for (int r : dilation_rates)
      if (r <= 0) throw config_error("multi-atrous: dilation rates must be positive");
    if (out_channels == 0) throw config_error("multi-atrous: out_channels must be positive");
    if (kernel_size <= 0 || kernel_size % 2 == 0)
      throw config_error("multi-atrous: kernel size must be positive and odd");
  }

  std::size_t resolved_mid() const { return mid_channels ? mid_channels : std::max<std::size_t>(1, out_channels / 2); }
};

/// Three parallel dilated convolutions plus a global-average branch,
/// concatenated and reduced by a 1x1 convolution. Spatial dims are preserved.
class MultiAtrousBlock {
 public:
  void build(Rng& rng, std::size_t cin, const MultiAtrousConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    const std::size_t mid = cfg.resolved_mid();
    for (std::size_t i = 0; i < 3; ++i)
      dilated_[i].init(rng, mid, cin, cfg.kernel_size, 1, cfg.dilation_rates[i], /*bias=*/true);
    gap_fc_.init(rng, mid, cin, /*bias=*/true);
    reduce_.init(rng, cfg.out_channels, 4 * mid, 1, 1, 1, /*bias=*/true);
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    for (std::size_t i = 0; i < 3; ++i) dilated_[i].collect(prefix + ".atrous" + std::to_string(i), out);
    gap_fc_.collect(prefix + ".gap", out);
    reduce_.collect(prefix + ".reduce", out);
  }

  Var forward(Tape& t, Var x) {
    const Tensor& xv = x.value();
    if (xv.dim(1) == 0 || xv.dim(2) == 0) throw invalid_input_error("multi-atrous: empty spatial dims");
    std::vector<Var> branches;
    branches.reserve(4);
    for (auto& conv : dilated_) branches.push_back(ad::relu(conv.forward(t, x)));
    // global-average branch: pool to a vector, 1x1-equivalent FC + ReLU, broadcast back
    Var pooled = ad::spatial_mean(x);
    Var gap = ad::relu(gap_fc_.forward(t, pooled));
    branches.push_back(ad::broadcast_map(gap, xv.dim(1), xv.dim(2)));
    Var cat = ad::concat0(branches);
    return ad::relu(reduce_.forward(t, cat));
  }

  std::vector<Var> forward_batch(Tape& t, const std::vector<Var>& xs) {
    std::vector<std::vector<Var>> branch_outs(4);
    for (std::size_t b = 0; b < 3; ++b) {
      branch_outs[b] = dilated_[b].forward_batch(t, xs);
      for (Var& v : branch_outs[b]) v = ad::relu(v);
    }
    std::vector<Var> pooled;
    pooled.reserve(xs.size());
    for (Var x : xs) pooled.push_back(ad::spatial_mean(x));
    std::vector<Var> gaps = gap_fc_.forward_batch(t, pooled);
    branch_outs[3].reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
      branch_outs[3].push_back(
          ad::broadcast_map(ad::relu(gaps[i]), xs[i].value().dim(1), xs[i].value().dim(2)));
    std::vector<Var> cats;
    cats.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
      cats.push_back(ad::concat0(
          {branch_outs[0][i], branch_outs[1][i], branch_outs[2][i], branch_outs[3][i]}));
    std::vector<Var> out = reduce_.forward_batch(t, cats);
    for (Var& v : out) v = ad::relu(v);
    return out;
  }

  const MultiAtrousConfig& config() const { return cfg_; }

 private:
  MultiAtrousConfig cfg_;
  std::array<Conv2dLayer, 3> dilated_;
  LinearLayer gap_fc_;
  Conv2dLayer reduce_;
};

/// 1x1 conv-bn, per-position channel L2 normalization, and a SoftPlus
/// attention map computed from the pre-normalization features. Output is the
/// normalized features modulated by the attention.
class SelfAttention {
 public:
  void build(Rng& rng, std::size_t channels, bool freeze_bn) {
    conv_.init(rng, channels, channels, 1, 1, 1, /*bias=*/false);
    bn_.init(channels, freeze_bn);
    att_.init(rng, 1, channels, 1, 1, 1, /*bias=*/true);
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    conv_.collect(prefix + ".conv", out);
    bn_.collect(prefix + ".bn", out);
    att_.collect(prefix + ".att", out);
  }

  /// Returns (modulated features, attention map). Inference mode.
  std::pair<Var, Var> forward(Tape& t, Var x) {
    Var feat = bn_.forward(t, conv_.forward(t, x));
    Var normalized = ad::l2norm_positions(feat, kNormEps);
    Var attention = ad::softplus(att_.forward(t, feat));
    return {ad::mul_attention(normalized, attention), attention};
  }

  std::pair<std::vector<Var>, std::vector<Var>> forward_batch(Tape& t, const std::vector<Var>& xs,
                                                              bool training) {
    std::vector<Var> feats = bn_.forward_batch(t, conv_.forward_batch(t, xs), training);
    std::vector<Var> atts = att_.forward_batch(t, feats);
    std::vector<Var> outs;
    outs.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      atts[i] = ad::softplus(atts[i]);
      outs.push_back(ad::mul_attention(ad::l2norm_positions(feats[i], kNormEps), atts[i]));
    }
    return {outs, atts};
  }

  static constexpr double kNormEps = 1e-6;

  Conv2dLayer& attention_conv() { return att_; }

 private:
  Conv2dLayer conv_;
  BatchNormLayer bn_;
  Conv2dLayer att_;
};

/// Attentive local feature tensor: multi-atrous pyramid then self-attention.
/// Either block can be disabled for ablations; with multi-atrous off, a 1x1
/// conv adapts the tap channels to the embedding width.
class LocalBranch {
 public:
  void build(Rng& rng, std::size_t cin, const MultiAtrousConfig& cfg, bool multi_atrous_on,
             bool self_attention_on, bool freeze_bn) {
    cfg.validate();
    multi_atrous_on_ = multi_atrous_on;
    self_attention_on_ = self_attention_on;
    out_channels_ = cfg.out_channels;
    if (multi_atrous_on_)
      atrous_.build(rng, cin, cfg);
    else
      adapter_.init(rng, cfg.out_channels, cin, 1, 1, 1, /*bias=*/true);
    if (self_attention_on_) attention_.build(rng, cfg.out_channels, freeze_bn);
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    if (multi_atrous_on_)
      atrous_.collect(prefix + ".multi_atrous", out);
    else
      adapter_.collect(prefix + ".adapter", out);
    if (self_attention_on_) attention_.collect(prefix + ".attention", out);
  }

  /// Returns (f_l, attention map); attention is empty when disabled.
  /// Inference mode.
  std::pair<Var, Var> forward(Tape& t, Var f_tap) {
    Var feats = multi_atrous_on_ ? atrous_.forward(t, f_tap) : ad::relu(adapter_.forward(t, f_tap));
    if (!self_attention_on_) return {feats, Var()};
    return attention_.forward(t, feats);
  }

  std::vector<Var> forward_batch(Tape& t, const std::vector<Var>& taps, bool training) {
    std::vector<Var> feats;
    if (multi_atrous_on_) {
      feats = atrous_.forward_batch(t, taps);
    } else {
      feats = adapter_.forward_batch(t, taps);
      for (Var& v : feats) v = ad::relu(v);
    }
    if (!self_attention_on_) return feats;
    return attention_.forward_batch(t, feats, training).first;
  }

  std::size_t out_channels() const { return out_channels_; }
  MultiAtrousBlock& multi_atrous() { return atrous_; }
  SelfAttention& attention() { return attention_; }

 private:
  bool multi_atrous_on_ = true;
  bool self_attention_on_ = true;
  std::size_t out_channels_ = 0;
  MultiAtrousBlock atrous_;
  Conv2dLayer adapter_;
  SelfAttention attention_;
};

}  // namespace dolg
