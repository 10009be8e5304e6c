// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dolg/extraction.hpp"
#include "dolg/model.hpp"
#include "dolg/train.hpp"

namespace dolg {

/// Flat dotted-key run configuration. A config file is a JSON object whose
/// keys are exactly the dotted names below; unknown keys are rejected.
/// Command-line `--set key=value` overrides win over the file.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string device = "cpu";

  std::string backbone_variant = "resnet50-like";
  std::size_t backbone_stage3_channels = 1024;
  std::size_t backbone_stage4_channels = 0;  // 0 = 2 x stage3
  int backbone_stage3_stride = 16;
  bool backbone_freeze_bn = false;
  std::string backbone_weights;  // optional pretrained manifest

  std::size_t model_embed_channels = 0;  // 0 = stage3_channels

  std::string global_pool = "gem";
  double global_gem_p = 3.0;
  double global_gem_eps = 1e-6;

  std::vector<int> local_dilation_rates{3, 6, 9};
  std::size_t local_mid_channels = 0;  // 0 = embed / 2
  int local_kernel_size = 3;
  bool local_multi_atrous = true;
  bool local_self_attention = true;

  std::string fusion_mode = "orthogonal";
  std::string fusion_location = "f3_only";
  std::string fusion_pool = "average";

  TrainConfig train;
  std::size_t train_image_size = 512;

  std::vector<double> extract_scales{0.3535, 0.5, 0.7071, 1.0, 1.4142};
  bool extract_strict = true;

  RunConfig() {
    train.image_size = train_image_size;
  }

  // ---- typed views -------------------------------------------------------

  std::size_t resolved_c4() const {
    return backbone_stage4_channels ? backbone_stage4_channels : 2 * backbone_stage3_channels;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.backbone.variant = parse_backbone_variant(backbone_variant);
    m.backbone.stage3_channels = backbone_stage3_channels;
    m.backbone.stage4_channels = resolved_c4();
    m.backbone.stage3_stride = backbone_stage3_stride;
    m.backbone.stage4_stride = 2 * backbone_stage3_stride;
    m.embed_channels = model_embed_channels;
    m.gem.p = global_gem_p;
    m.gem.epsilon = global_gem_eps;
    if (local_dilation_rates.size() != 3)
      throw config_error("local.dilation_rates must list exactly 3 rates");
    m.multi_atrous.dilation_rates = {local_dilation_rates[0], local_dilation_rates[1],
                                     local_dilation_rates[2]};
    m.multi_atrous.mid_channels = local_mid_channels;
    m.multi_atrous.kernel_size = local_kernel_size;
    m.multi_atrous.out_channels = m.resolved_embed();
    m.global_pool = parse_pool_method(global_pool);
    m.fusion_pool = parse_pool_method(fusion_pool);
    m.fusion_mode = parse_fusion_mode(fusion_mode);
    m.location = parse_fusion_location(fusion_location);
    m.multi_atrous_on = local_multi_atrous;
    m.self_attention_on = local_self_attention;
    m.freeze_bn = backbone_freeze_bn;
    m.backbone.validate();
    m.gem.validate();
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.image_size = train_image_size;
    t.validate();
    return t;
  }

  ScaleSet scale_set() const {
    ScaleSet s;
    s.scales = extract_scales;
    s.validate();
    return s;
  }

  void validate() const {
    if (device != "cpu") throw config_error("device: only 'cpu' is supported, got '" + device + "'");
    model_config();
    train_config();
    scale_set();
  }

  // ---- flat JSON binding -------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["device"] = device;
    j["backbone.variant"] = backbone_variant;
    j["backbone.stage3_channels"] = backbone_stage3_channels;
    j["backbone.stage4_channels"] = backbone_stage4_channels;
    j["backbone.stage3_stride"] = backbone_stage3_stride;
    j["backbone.freeze_bn"] = backbone_freeze_bn;
    j["backbone.weights"] = backbone_weights;
    j["model.embed_channels"] = model_embed_channels;
    j["global.pool"] = global_pool;
    j["global.gem_p"] = global_gem_p;
    j["global.gem_eps"] = global_gem_eps;
    j["local.dilation_rates"] = local_dilation_rates;
    j["local.mid_channels"] = local_mid_channels;
    j["local.kernel_size"] = local_kernel_size;
    j["local.multi_atrous"] = local_multi_atrous;
    j["local.self_attention"] = local_self_attention;
    j["fusion.mode"] = fusion_mode;
    j["fusion.location"] = fusion_location;
    j["fusion.pool"] = fusion_pool;
    j["train.batch_size"] = train.batch_size;
    j["train.epochs"] = train.epochs;
    j["train.warmup_epochs"] = train.warmup_epochs;
    j["train.base_lr"] = train.base_lr;
    j["train.momentum"] = train.momentum;
    j["train.weight_decay"] = train.weight_decay;
    j["train.split_fraction"] = train.split_fraction;
    j["train.margin"] = train.margin;
    j["train.gamma"] = train.gamma;
    j["train.augment"] = train.augment;
    j["train.aug_scale_min"] = train.aug.scale_min;
    j["train.aug_scale_max"] = train.aug.scale_max;
    j["train.aug_aspect_min"] = train.aug.aspect_min;
    j["train.aug_aspect_max"] = train.aug.aspect_max;
    j["train.image_size"] = train_image_size;
    j["extract.scales"] = extract_scales;
    j["extract.strict"] = extract_strict;
    return j;
  }

  void apply(const std::string& key, const nlohmann::json& v) {
    try {
      if (key == "seed") seed = v.get<std::uint64_t>();
      else if (key == "device") device = v.get<std::string>();
      else if (key == "backbone.variant") backbone_variant = v.get<std::string>();
      else if (key == "backbone.stage3_channels") backbone_stage3_channels = v.get<std::size_t>();
      else if (key == "backbone.stage4_channels") backbone_stage4_channels = v.get<std::size_t>();
      else if (key == "backbone.stage3_stride") backbone_stage3_stride = v.get<int>();
      else if (key == "backbone.freeze_bn") backbone_freeze_bn = v.get<bool>();
      else if (key == "backbone.weights") backbone_weights = v.get<std::string>();
      else if (key == "model.embed_channels") model_embed_channels = v.get<std::size_t>();
      else if (key == "global.pool") global_pool = v.get<std::string>();
      else if (key == "global.gem_p") global_gem_p = v.get<double>();
      else if (key == "global.gem_eps") global_gem_eps = v.get<double>();
      else if (key == "local.dilation_rates") local_dilation_rates = v.get<std::vector<int>>();
      else if (key == "local.mid_channels") local_mid_channels = v.get<std::size_t>();
      else if (key == "local.kernel_size") local_kernel_size = v.get<int>();
      else if (key == "local.multi_atrous") local_multi_atrous = v.get<bool>();
      else if (key == "local.self_attention") local_self_attention = v.get<bool>();
      else if (key == "fusion.mode") fusion_mode = v.get<std::string>();
      else if (key == "fusion.location") fusion_location = v.get<std::string>();
      else if (key == "fusion.pool") fusion_pool = v.get<std::string>();
      else if (key == "train.batch_size") train.batch_size = v.get<std::size_t>();
      else if (key == "train.epochs") train.epochs = v.get<std::size_t>();
      else if (key == "train.warmup_epochs") train.warmup_epochs = v.get<std::size_t>();
      else if (key == "train.base_lr") train.base_lr = v.get<double>();
      else if (key == "train.momentum") train.momentum = v.get<double>();
      else if (key == "train.weight_decay") train.weight_decay = v.get<double>();
      else if (key == "train.split_fraction") train.split_fraction = v.get<double>();
      else if (key == "train.margin") train.margin = v.get<double>();
      else if (key == "train.gamma") train.gamma = v.get<double>();
      else if (key == "train.augment") train.augment = v.get<bool>();
      else if (key == "train.aug_scale_min") train.aug.scale_min = v.get<double>();
      else if (key == "train.aug_scale_max") train.aug.scale_max = v.get<double>();
      else if (key == "train.aug_aspect_min") train.aug.aspect_min = v.get<double>();
      else if (key == "train.aug_aspect_max") train.aug.aspect_max = v.get<double>();
      else if (key == "train.image_size") train_image_size = v.get<std::size_t>();
      else if (key == "extract.scales") extract_scales = v.get<std::vector<double>>();
      else if (key == "extract.strict") extract_strict = v.get<bool>();
      else throw config_error("unknown config key: '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw config_error("config key '" + key + "': bad value type (" + e.what() + ")");
    }
  }

  void apply_object(const nlohmann::json& j) {
    if (!j.is_object()) throw config_error("config must be a JSON object with flat dotted keys");
    for (auto it = j.begin(); it != j.end(); ++it) apply(it.key(), it.value());
  }

  /// Parses "key=value"; the value is tried as JSON first and falls back to a
  /// plain string, so `--set train.base_lr=0.1` and `--set device=cpu` work.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("override must look like key=value: '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;
    apply(key, v);
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw config_error("config " + path + ": " + e.what());
    }
    RunConfig cfg;
    cfg.apply_object(j);
    return cfg;
  }

  /// FNV-1a hash of the fully resolved configuration.
  std::uint64_t hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

}  // namespace dolg
