// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dolg/backbone.hpp"
#include "dolg/fusion.hpp"
#include "dolg/global_branch.hpp"
#include "dolg/local_branch.hpp"
#include "dolg/manifest.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

enum class FusionLocation { GlobalOnly, F3Only, F4Only, BothF3F4 };

inline FusionLocation parse_fusion_location(const std::string& s) {
  if (s == "global_only") return FusionLocation::GlobalOnly;
  if (s == "f3_only") return FusionLocation::F3Only;
  if (s == "f4_only") return FusionLocation::F4Only;
  if (s == "both_f3_f4") return FusionLocation::BothF3F4;
  throw config_error("unknown fusion location: " + s);
}

inline std::string to_string(FusionLocation l) {
  switch (l) {
    case FusionLocation::GlobalOnly: return "global_only";
    case FusionLocation::F3Only: return "f3_only";
    case FusionLocation::F4Only: return "f4_only";
    case FusionLocation::BothF3F4: return "both_f3_f4";
  }
  return "?";
}

struct ModelConfig {
  BackboneSpec backbone;
  std::size_t embed_channels = 0;  // 0 = stage3_channels
  GemConfig gem;
  MultiAtrousConfig multi_atrous;  // out_channels filled from embed width
  PoolMethod global_pool = PoolMethod::Gem;
  PoolMethod fusion_pool = PoolMethod::Average;
  FusionMode fusion_mode = FusionMode::Orthogonal;
  FusionLocation location = FusionLocation::F3Only;
  bool multi_atrous_on = true;
  bool self_attention_on = true;
  bool freeze_bn = false;

  std::size_t resolved_embed() const {
    return embed_channels ? embed_channels : backbone.stage3_channels;
  }
};

/// The full retrieval network: backbone taps, global branch, local branch(es),
/// and the fusion head emitting the (unnormalized) 512-d descriptor.
class DolgModel {
 public:
  static constexpr std::size_t kDescriptorDim = FusionHead::kOutputDim;

  DolgModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.backbone.validate();
    cfg_.gem.validate();
    Rng rng(seed);
    const std::size_t embed = cfg_.resolved_embed();
    backbone_.build(cfg_.backbone, rng, cfg_.freeze_bn);
    global_.build(rng, cfg_.backbone.stage4_channels, embed, cfg_.global_pool, cfg_.gem);

    MultiAtrousConfig ma = cfg_.multi_atrous;
    ma.out_channels = embed;

    switch (cfg_.location) {
      case FusionLocation::GlobalOnly:
        final_fc_.init(rng, kDescriptorDim, embed, /*bias=*/true);
        break;
      case FusionLocation::F3Only:
        local3_ = std::make_unique<LocalBranch>();
        local3_->build(rng, cfg_.backbone.stage3_channels, ma, cfg_.multi_atrous_on,
                       cfg_.self_attention_on, cfg_.freeze_bn);
        fusion_.build(rng, embed, 1, cfg_.fusion_mode, cfg_.fusion_pool, cfg_.gem);
        break;
      case FusionLocation::F4Only:
        local4_ = std::make_unique<LocalBranch>();
        local4_->build(rng, cfg_.backbone.stage4_channels, ma, cfg_.multi_atrous_on,
                       cfg_.self_attention_on, cfg_.freeze_bn);
        fusion_.build(rng, embed, 1, cfg_.fusion_mode, cfg_.fusion_pool, cfg_.gem);
        break;
      case FusionLocation::BothF3F4:
        local3_ = std::make_unique<LocalBranch>();
        local3_->build(rng, cfg_.backbone.stage3_channels, ma, cfg_.multi_atrous_on,
                       cfg_.self_attention_on, cfg_.freeze_bn);
        local4_ = std::make_unique<LocalBranch>();
        local4_->build(rng, cfg_.backbone.stage4_channels, ma, cfg_.multi_atrous_on,
                       cfg_.self_attention_on, cfg_.freeze_bn);
        fusion_.build(rng, embed, 2, cfg_.fusion_mode, cfg_.fusion_pool, cfg_.gem);
        break;
    }

    backbone_.collect(params_);
    global_.collect(params_);
    if (local3_) local3_->collect("local3", params_);
    if (local4_) local4_->collect("local4", params_);
    if (cfg_.location == FusionLocation::GlobalOnly)
      final_fc_.collect("global_only.fc", params_);
    else
      fusion_.collect(params_);
  }

  DolgModel(const DolgModel&) = delete;
  DolgModel& operator=(const DolgModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  Backbone& backbone() { return backbone_; }
  GlobalBranch& global_branch() { return global_; }
  LocalBranch* local3() { return local3_.get(); }
  LocalBranch* local4() { return local4_.get(); }
  FusionHead& fusion() { return fusion_; }
  std::vector<Parameter*>& params() { return params_; }

  /// Graph-building forward pass to the unnormalized 512-d descriptor.
  /// Inference mode: batch-norm layers read their running statistics.
  Var forward(Tape& t, const Tensor& image) {
    backbone_.check_input(image);
    auto [f3, f4] = backbone_.forward(t, t.leaf(image));
    Var f_g = global_.forward(t, f4);
    switch (cfg_.location) {
      case FusionLocation::GlobalOnly: return final_fc_.forward(t, f_g);
      case FusionLocation::F3Only: return fusion_.forward(t, {local3_->forward(t, f3).first}, f_g);
      case FusionLocation::F4Only: return fusion_.forward(t, {local4_->forward(t, f4).first}, f_g);
      case FusionLocation::BothF3F4:
        return fusion_.forward(t, {local3_->forward(t, f3).first, local4_->forward(t, f4).first}, f_g);
    }
    throw config_error("unreachable fusion location");
  }

  /// Training-mode batch forward: batch-norm statistics come from the batch
  /// (unless frozen) and the running averages are updated.
  std::vector<Var> forward_batch(Tape& t, const std::vector<Tensor>& images, bool training = true) {
    std::vector<Var> leaves;
    leaves.reserve(images.size());
    for (const Tensor& img : images) {
      backbone_.check_input(img);
      leaves.push_back(t.leaf(img));
    }
    auto [f3s, f4s] = backbone_.forward_batch(t, leaves, training);
    std::vector<Var> f_gs = global_.forward_batch(t, f4s);

    if (cfg_.location == FusionLocation::GlobalOnly) return final_fc_.forward_batch(t, f_gs);

    std::vector<std::vector<Var>> locals_per_item(images.size());
    if (cfg_.location == FusionLocation::F3Only || cfg_.location == FusionLocation::BothF3F4) {
      std::vector<Var> l3 = local3_->forward_batch(t, f3s, training);
      for (std::size_t i = 0; i < images.size(); ++i) locals_per_item[i].push_back(l3[i]);
    }
    if (cfg_.location == FusionLocation::F4Only || cfg_.location == FusionLocation::BothF3F4) {
      std::vector<Var> l4 = local4_->forward_batch(t, f4s, training);
      for (std::size_t i = 0; i < images.size(); ++i) locals_per_item[i].push_back(l4[i]);
    }
    return fusion_.forward_batch(t, locals_per_item, f_gs);
  }

  /// Value-only descriptor (unnormalized), inference mode.
  Tensor descriptor(const Tensor& image) {
    Tape t;
    return forward(t, image).value();
  }

  void to_manifest(TensorManifest& m) const {
    for (const Parameter* p : params_) m.add(p->name, p->value);
  }

  /// Loads named tensors. With `partial` set, parameters missing from the
  /// manifest keep their current values; manifest entries that match no
  /// parameter are always an error.
  void load(const TensorManifest& m, bool partial = false) {
    for (const auto& [name, t] : m.entries) {
      bool matched = false;
      for (Parameter* p : params_)
        if (p->name == name) {
          if (!p->value.same_shape(t))
            throw shape_error("load: tensor '" + name + "' shape " + t.shape_str() +
                              " does not match parameter shape " + p->value.shape_str());
          p->set_value(t);
          matched = true;
          break;
        }
      if (!matched && name != "head.weights")
        throw data_error("load: manifest tensor '" + name + "' matches no model parameter");
    }
    if (!partial)
      for (Parameter* p : params_)
        if (!m.find(p->name)) throw data_error("load: checkpoint is missing parameter '" + p->name + "'");
  }

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  GlobalBranch global_;
  std::unique_ptr<LocalBranch> local3_;
  std::unique_ptr<LocalBranch> local4_;
  FusionHead fusion_;
  LinearLayer final_fc_;  // global_only location
  std::vector<Parameter*> params_;
};

}  // namespace dolg
