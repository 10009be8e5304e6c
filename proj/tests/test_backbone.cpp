// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#include "helpers.hpp"

#include "dolg/backbone.hpp"
#include "dolg/model.hpp"

using namespace dolg;

namespace {

Backbone& toy_backbone() {
  static Backbone backbone;
  static bool built = false;
  if (!built) {
    Rng rng(42);
    backbone.build(default_backbone_spec(BackboneVariant::ToyCnn), rng, false);
    built = true;
  }
  return backbone;
}

}  // namespace

TEST_CASE("toy backbone tap shapes at 64x64") {
  Rng rng(1);
  auto [f3, f4] = toy_backbone().forward_maps(rng.normal_tensor({3, 64, 64}, 1.0));
  REQUIRE(f3.data.shape() == std::vector<std::size_t>{64, 4, 4});
  REQUIRE(f3.stride == 16);
  REQUIRE(f4.data.shape() == std::vector<std::size_t>{128, 2, 2});
  REQUIRE(f4.stride == 32);
}

TEST_CASE("odd input sizes use ceiling division") {
  Rng rng(2);
  auto [f3, f4] = toy_backbone().forward_maps(rng.normal_tensor({3, 65, 33}, 1.0));
  REQUIRE(f3.data.shape() == std::vector<std::size_t>{64, 5, 3});
  REQUIRE(f4.data.shape() == std::vector<std::size_t>{128, 3, 2});
}

TEST_CASE("resnet50-like structural shapes at 512x512") {
  Rng rng(3);
  Backbone backbone;
  backbone.build(default_backbone_spec(BackboneVariant::Resnet50Like), rng, false);
  auto [f3, f4] = backbone.forward_maps(rng.normal_tensor({3, 512, 512}, 1.0));
  REQUIRE(f3.data.shape() == std::vector<std::size_t>{1024, 32, 32});
  REQUIRE(f4.data.shape() == std::vector<std::size_t>{2048, 16, 16});
  REQUIRE(f3.data.all_finite());
  REQUIRE(f4.data.all_finite());
}

TEST_CASE("undersized images are rejected with the offending dimension") {
  Rng rng(4);
  try {
    toy_backbone().forward_maps(rng.normal_tensor({3, 8, 64}, 1.0));
    FAIL("expected invalid_input_error");
  } catch (const invalid_input_error& e) {
    REQUIRE(std::string(e.what()).find("height 8") != std::string::npos);
    REQUIRE(std::string(e.what()).find("32") != std::string::npos);
  }
  try {
    toy_backbone().forward_maps(rng.normal_tensor({3, 64, 8}, 1.0));
    FAIL("expected invalid_input_error");
  } catch (const invalid_input_error& e) {
    REQUIRE(std::string(e.what()).find("width 8") != std::string::npos);
  }
}

TEST_CASE("output shapes depend only on the input shape") {
  Rng rng(5);
  auto [a3, a4] = toy_backbone().forward_maps(rng.normal_tensor({3, 48, 96}, 1.0));
  auto [b3, b4] = toy_backbone().forward_maps(rng.uniform_tensor({3, 48, 96}, -1.0, 1.0));
  REQUIRE(a3.data.shape() == b3.data.shape());
  REQUIRE(a4.data.shape() == b4.data.shape());
  REQUIRE(a3.data.all_finite());
  REQUIRE(a4.data.all_finite());
}

TEST_CASE("f4 is downstream of f3: zeroing the trunk zeroes both taps") {
  Rng rng(6);
  Backbone backbone;
  backbone.build(default_backbone_spec(BackboneVariant::ToyCnn), rng, false);
  std::vector<Parameter*> params;
  backbone.collect(params);
  for (Parameter* p : params) {
    // zero everything that produces f3 (stages 0..3); leave stage4 untouched
    if (p->name.rfind("backbone.stage4", 0) == 0) continue;
    p->value.fill(0.0);
  }
  auto [f3, f4] = backbone.forward_maps(rng.normal_tensor({3, 64, 64}, 1.0));
  for (std::size_t i = 0; i < f3.data.numel(); ++i) REQUIRE(f3.data[i] == 0.0);
  for (std::size_t i = 0; i < f4.data.numel(); ++i) REQUIRE(f4.data[i] == 0.0);
}

TEST_CASE("backbone spec validation") {
  BackboneSpec s = default_backbone_spec(BackboneVariant::ToyCnn);
  s.stage4_stride = 48;
  REQUIRE_THROWS_AS(s.validate(), config_error);
  s = default_backbone_spec(BackboneVariant::Resnet50Like);
  s.stage4_channels = 1024;
  REQUIRE_THROWS_AS(s.validate(), config_error);
  s = default_backbone_spec(BackboneVariant::ToyCnn);
  s.stage3_stride = 12;
  s.stage4_stride = 24;
  REQUIRE_THROWS_AS(s.validate(), config_error);
  REQUIRE_THROWS_AS(parse_backbone_variant("resnet18"), config_error);
}

TEST_CASE("model parameters survive a manifest round trip") {
  ModelConfig cfg;
  cfg.backbone = default_backbone_spec(BackboneVariant::ToyCnn);
  cfg.backbone.stage3_channels = 16;
  cfg.backbone.stage4_channels = 32;
  DolgModel model(cfg, 7);

  Rng rng(8);
  const Tensor image = rng.normal_tensor({3, 64, 64}, 0.5);
  const Tensor before = model.descriptor(image);

  const std::string dir = testutil::scratch_dir("backbone-manifest");
  TensorManifest m;
  model.to_manifest(m);
  write_manifest(dir + "/weights.dolg", m);

  DolgModel fresh(cfg, 999);  // different init
  fresh.load(read_manifest(dir + "/weights.dolg"));
  const Tensor after = fresh.descriptor(image);
  // float32 storage rounds the parameters, so compare loosely
  REQUIRE(max_abs_diff(before, after) < 1e-3);

  // loading the same manifest again must be byte-stable
  TensorManifest m2;
  fresh.to_manifest(m2);
  write_manifest(dir + "/weights2.dolg", m2);
  DolgModel third(cfg, 1);
  third.load(read_manifest(dir + "/weights2.dolg"));
  REQUIRE(max_abs_diff(fresh.descriptor(image), third.descriptor(image)) == 0.0);

  // unknown tensor names are rejected
  TensorManifest bad = m;
  bad.add("no.such.parameter", Tensor({2}));
  write_manifest(dir + "/bad.dolg", bad);
  REQUIRE_THROWS_AS(fresh.load(read_manifest(dir + "/bad.dolg")), data_error);

  // shape mismatches are rejected
  TensorManifest wrong;
  wrong.add(m.entries.front().first, Tensor({3}));
  write_manifest(dir + "/wrong.dolg", wrong);
  REQUIRE_THROWS_AS(fresh.load(read_manifest(dir + "/wrong.dolg"), true), shape_error);

  // partial load keeps unlisted parameters
  TensorManifest partial;
  partial.add(m.entries.front().first, m.entries.front().second);
  REQUIRE_NOTHROW(fresh.load(partial, true));
}
