// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#include "helpers.hpp"

#include <fstream>

#include "dolg/commands.hpp"
#include "dolg/dataset.hpp"
#include "dolg/train.hpp"

using namespace dolg;

namespace {

RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.backbone_variant = "toy-cnn";
  cfg.backbone_stage3_channels = 16;
  cfg.backbone_stage4_channels = 0;
  cfg.seed = 5;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 3;
  cfg.train.warmup_epochs = 1;
  cfg.train.base_lr = 0.02;
  cfg.train_image_size = 48;
  cfg.extract_scales = {1.0};
  return cfg;
}

ToyDatasetFiles tiny_dataset(const std::string& dir) {
  return generate_toy_dataset(dir, 4, 6, 48, 77);
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("a short training run keeps the loss finite and reduces it") {
  const std::string dir = testutil::scratch_dir("train-short");
  const ToyDatasetFiles files = tiny_dataset(dir + "/data");
  const RunConfig cfg = tiny_run_config();

  const LabeledDataset ds = load_dataset_manifest(files.manifest);
  DolgModel model(cfg.model_config(), cfg.seed);
  Trainer trainer(model, cfg.train_config(), cfg.seed);
  const TrainReport report = trainer.train(ds);

  REQUIRE(report.epochs.size() == 3);
  for (const EpochStats& e : report.epochs) {
    REQUIRE(std::isfinite(e.loss));
    REQUIRE(e.train_acc >= 0.0);
    REQUIRE(e.val_acc >= 0.0);
  }
  REQUIRE(report.epochs.back().loss < report.epochs.front().loss);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  const std::string dir = testutil::scratch_dir("train-determinism");
  const ToyDatasetFiles files = tiny_dataset(dir + "/data");
  RunConfig cfg = tiny_run_config();
  cfg.train.epochs = 2;

  const TrainOutputs a = cmd_train(cfg, files.manifest, dir + "/run_a");
  const TrainOutputs b = cmd_train(cfg, files.manifest, dir + "/run_b");

  REQUIRE(file_bytes(a.report) == file_bytes(b.report));
  REQUIRE(file_bytes(a.checkpoint) == file_bytes(b.checkpoint));

  // loss trajectories identical at the double level
  for (std::size_t i = 0; i < a.stats.epochs.size(); ++i)
    REQUIRE(a.stats.epochs[i].loss == b.stats.epochs[i].loss);
}

TEST_CASE("single-class batches stay finite") {
  const std::string dir = testutil::scratch_dir("train-singleclass");
  const ToyDatasetFiles files = generate_toy_dataset(dir + "/data", 2, 4, 48, 3);
  RunConfig cfg = tiny_run_config();
  cfg.train.batch_size = 1;  // every batch holds one class
  cfg.train.epochs = 2;
  cfg.train.warmup_epochs = 1;

  const LabeledDataset ds = load_dataset_manifest(files.manifest);
  DolgModel model(cfg.model_config(), cfg.seed);
  Trainer trainer(model, cfg.train_config(), cfg.seed);
  const TrainReport report = trainer.train(ds);
  for (const EpochStats& e : report.epochs) REQUIRE(std::isfinite(e.loss));
}

TEST_CASE("a diverging run aborts with a diagnostic naming the step") {
  const std::string dir = testutil::scratch_dir("train-diverge");
  const ToyDatasetFiles files = tiny_dataset(dir + "/data");
  RunConfig cfg = tiny_run_config();
  cfg.train.base_lr = 1e14;  // guaranteed blow-up
  cfg.train.warmup_epochs = 0;
  cfg.train.epochs = 4;

  const LabeledDataset ds = load_dataset_manifest(files.manifest);
  DolgModel model(cfg.model_config(), cfg.seed);
  Trainer trainer(model, cfg.train_config(), cfg.seed);
  try {
    trainer.train(ds);
    FAIL("expected invalid_input_error");
  } catch (const invalid_input_error& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("non-finite loss") != std::string::npos);
    REQUIRE(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("checkpoints reload into an equivalent model") {
  const std::string dir = testutil::scratch_dir("train-checkpoint");
  const ToyDatasetFiles files = tiny_dataset(dir + "/data");
  RunConfig cfg = tiny_run_config();
  cfg.train.epochs = 2;
  const TrainOutputs out = cmd_train(cfg, files.manifest, dir + "/run");

  DolgModel restored(cfg.model_config(), 12345);
  const TensorManifest m = read_manifest(out.checkpoint);
  restored.load(m);

  // metadata block carries epoch/seed/config hash
  const nlohmann::json meta = nlohmann::json::parse(m.metadata);
  REQUIRE(meta["epoch"] == 2);
  REQUIRE(meta["seed"] == cfg.seed);
  REQUIRE(meta["config_hash"] == cfg.hash());

  // saving the restored model again is byte-stable (float32 fixed point)
  TensorManifest m2;
  m2.metadata = m.metadata;
  restored.to_manifest(m2);
  const Tensor* head = m.find("head.weights");
  REQUIRE(head != nullptr);
  m2.add("head.weights", *head);
  write_manifest(dir + "/again.dolg", m2);
  REQUIRE(file_bytes(out.checkpoint) == file_bytes(dir + "/again.dolg"));
}

TEST_CASE("training can start from pretrained backbone weights") {
  const std::string dir = testutil::scratch_dir("train-pretrained");
  const ToyDatasetFiles files = tiny_dataset(dir + "/data");
  RunConfig cfg = tiny_run_config();
  cfg.train.epochs = 1;

  // build a donor model and keep only its backbone tensors
  DolgModel donor(cfg.model_config(), 777);
  TensorManifest all;
  donor.to_manifest(all);
  TensorManifest backbone_only;
  for (const auto& [name, t] : all.entries)
    if (name.rfind("backbone.", 0) == 0) backbone_only.add(name, t);
  write_manifest(dir + "/backbone.dolg", backbone_only);

  cfg.backbone_weights = dir + "/backbone.dolg";
  REQUIRE_NOTHROW(cmd_train(cfg, files.manifest, dir + "/run"));

  // a fresh model loading the same subset produces the donor's tap outputs
  DolgModel probe(cfg.model_config(), 1);
  probe.load(read_manifest(dir + "/backbone.dolg"), /*partial=*/true);
  Rng rng(2);
  const Tensor img = rng.normal_tensor({3, 48, 48}, 0.5);
  auto [df3, df4] = donor.backbone().forward_maps(img);
  auto [pf3, pf4] = probe.backbone().forward_maps(img);
  REQUIRE(max_abs_diff(df3.data, pf3.data) < 1e-3);  // float32 rounding
  REQUIRE(max_abs_diff(df4.data, pf4.data) < 1e-3);
}

TEST_CASE("the train command writes a run directory with config snapshot and epoch log") {
  const std::string dir = testutil::scratch_dir("train-rundir");
  const ToyDatasetFiles files = tiny_dataset(dir + "/data");
  RunConfig cfg = tiny_run_config();
  cfg.train.epochs = 2;
  const TrainOutputs out = cmd_train(cfg, files.manifest, dir + "/run");

  const nlohmann::json snapshot = nlohmann::json::parse(file_bytes(out.config_snapshot));
  RunConfig back;
  back.apply_object(snapshot);
  REQUIRE(back.hash() == cfg.hash());

  std::ifstream report(out.report);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(report, line)) {
    const nlohmann::json rec = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "lr", "loss", "train_acc", "val_acc"})
      REQUIRE(rec.contains(key));
    ++lines;
  }
  REQUIRE(lines == 2);
}
