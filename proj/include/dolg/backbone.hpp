// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dolg/layers.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

enum class BackboneVariant { ToyCnn, Resnet50Like, Resnet101Like };

inline BackboneVariant parse_backbone_variant(const std::string& s) {
  if (s == "toy-cnn") return BackboneVariant::ToyCnn;
  if (s == "resnet50-like") return BackboneVariant::Resnet50Like;
  if (s == "resnet101-like") return BackboneVariant::Resnet101Like;
  throw config_error("unknown backbone variant: " + s);
}

inline std::string to_string(BackboneVariant v) {
  switch (v) {
    case BackboneVariant::ToyCnn: return "toy-cnn";
    case BackboneVariant::Resnet50Like: return "resnet50-like";
    case BackboneVariant::Resnet101Like: return "resnet101-like";
  }
  return "?";
}

/// Structural description of the feature extractor: the two tap points that
/// feed the local and global branches.
struct BackboneSpec {
  std::size_t stage3_channels = 64;   // C3
  std::size_t stage4_channels = 128;  // C4
  int stage3_stride = 16;
  int stage4_stride = 32;
  BackboneVariant variant = BackboneVariant::ToyCnn;

  void validate() const {
    if (stage3_channels == 0 || stage4_channels == 0)
      throw config_error("backbone: channel counts must be positive");
    if (stage3_stride <= 0 || stage4_stride <= 0)
      throw config_error("backbone: strides must be positive");
    if (stage4_stride != 2 * stage3_stride)
      throw config_error("backbone: stage4_stride must equal 2 x stage3_stride");
    if ((stage3_stride & (stage3_stride - 1)) != 0)
      throw config_error("backbone: stage3_stride must be a power of two");
    if (variant != BackboneVariant::ToyCnn && stage4_channels != 2 * stage3_channels)
      throw config_error("backbone: resnet-like variants require stage4_channels == 2 x stage3_channels");
  }
};

inline BackboneSpec default_backbone_spec(BackboneVariant v) {
  BackboneSpec s;
  s.variant = v;
  if (v == BackboneVariant::ToyCnn) {
    s.stage3_channels = 64;
    s.stage4_channels = 128;
  } else {
    s.stage3_channels = 1024;
    s.stage4_channels = 2048;
  }
  s.stage3_stride = 16;
  s.stage4_stride = 32;
  return s;
}

/// Rank-3 activation map plus its stride relative to the input image.
struct FeatureMap {
  Tensor data;  // (C,H,W)
  int stride = 1;
};

/// Stack of stride-2 conv/bn/relu stages. The trunk ends at f3; one more
/// stage derives f4 from f3, so f4 is always downstream of f3.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  void build(const BackboneSpec& spec, Rng& rng, bool freeze_bn) {
    spec.validate();
    spec_ = spec;
    // one stride-2 stage per factor of two in stage3_stride
    int depth = 0;
    for (int s = spec.stage3_stride; s > 1; s /= 2) ++depth;
    trunk_.clear();
    trunk_.resize(static_cast<std::size_t>(depth));
    std::size_t cin = 3;
    for (int i = 0; i < depth; ++i) {
      // widths ramp up to C3 over the trunk: C3 / 2^(depth-1-i), floored at 8
      std::size_t cout = spec.stage3_channels >> (depth - 1 - i);
      if (cout < 8) cout = 8;
      if (i == depth - 1) cout = spec.stage3_channels;
      trunk_[static_cast<std::size_t>(i)].conv.init(rng, cout, cin, 3, 2, 1, /*bias=*/false);
      trunk_[static_cast<std::size_t>(i)].bn.init(cout, freeze_bn);
      cin = cout;
    }
    stage4_.conv.init(rng, spec.stage4_channels, spec.stage3_channels, 3, 2, 1, /*bias=*/false);
    stage4_.bn.init(spec.stage4_channels, freeze_bn);
  }

  void collect(std::vector<Parameter*>& out) {
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
      trunk_[i].conv.collect("backbone.stage" + std::to_string(i) + ".conv", out);
      trunk_[i].bn.collect("backbone.stage" + std::to_string(i) + ".bn", out);
    }
    stage4_.conv.collect("backbone.stage4.conv", out);
    stage4_.bn.collect("backbone.stage4.bn", out);
  }

  const BackboneSpec& spec() const { return spec_; }

  void check_input(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3)
      throw invalid_input_error("backbone: expected a 3xHxW image, got " + image.shape_str());
    const auto min = static_cast<std::size_t>(spec_.stage4_stride);
    if (image.dim(1) < min)
      throw invalid_input_error("backbone: image height " + std::to_string(image.dim(1)) +
                                " below minimum " + std::to_string(min));
    if (image.dim(2) < min)
      throw invalid_input_error("backbone: image width " + std::to_string(image.dim(2)) +
                                " below minimum " + std::to_string(min));
  }

  /// Returns (f3, f4) vars; f4 is computed from f3. Inference mode.
  std::pair<Var, Var> forward(Tape& t, Var image) {
    Var x = image;
    for (auto& stage : trunk_) x = ad::relu(stage.bn.forward(t, stage.conv.forward(t, x)));
    Var f3 = x;
    Var f4 = ad::relu(stage4_.bn.forward(t, stage4_.conv.forward(t, f3)));
    return {f3, f4};
  }

  std::pair<std::vector<Var>, std::vector<Var>> forward_batch(Tape& t, const std::vector<Var>& images,
                                                              bool training) {
    std::vector<Var> xs = images;
    for (auto& stage : trunk_) {
      xs = stage.bn.forward_batch(t, stage.conv.forward_batch(t, xs), training);
      for (Var& x : xs) x = ad::relu(x);
    }
    std::vector<Var> f3 = xs;
    std::vector<Var> f4 = stage4_.bn.forward_batch(t, stage4_.conv.forward_batch(t, xs), training);
    for (Var& x : f4) x = ad::relu(x);
    return {f3, f4};
  }

  /// Value-only forward pass to the two tap points.
  std::pair<FeatureMap, FeatureMap> forward_maps(const Tensor& image) {
    check_input(image);
    Tape t;
    auto [f3, f4] = forward(t, t.leaf(image));
    return {FeatureMap{f3.value(), spec_.stage3_stride}, FeatureMap{f4.value(), spec_.stage4_stride}};
  }

 private:
  struct Stage {
    Conv2dLayer conv;
    BatchNormLayer bn;
  };

  BackboneSpec spec_;
  std::vector<Stage> trunk_;
  Stage stage4_;
};

}  // namespace dolg
