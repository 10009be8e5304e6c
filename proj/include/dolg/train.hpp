// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dolg/arcface.hpp"
#include "dolg/dataset.hpp"
#include "dolg/image.hpp"
#include "dolg/manifest.hpp"
#include "dolg/model.hpp"
#include "dolg/schedule.hpp"

namespace dolg {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 5;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double split_fraction = 0.8;
  double margin = 0.15;
  double gamma = 30.0;
  bool augment = true;
  AugmentConfig aug;
  std::size_t image_size = 64;

  void validate() const {
    if (batch_size == 0) throw config_error("train: batch_size must be positive");
    if (epochs == 0) throw config_error("train: epochs must be positive");
    if (warmup_epochs >= epochs) throw config_error("train: warmup_epochs must be < epochs");
    if (!(base_lr > 0.0)) throw config_error("train: base_lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("train: momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw config_error("train: weight_decay must be >= 0");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
      throw config_error("train: split_fraction must lie in (0,1)");
    if (!(margin >= 0.0 && margin < 3.14159265358979323846))
      throw config_error("train: margin must lie in [0, pi)");
    if (!(gamma > 0.0)) throw config_error("train: gamma must be > 0");
    if (image_size == 0) throw config_error("train: image_size must be positive");
  }
};

/// Schedule value for a step given the config; warmup length in steps is the
/// warmup-epoch fraction of the total.
inline double lr_at(long step, long total_steps, const TrainConfig& cfg) {
  const long warmup_steps =
      static_cast<long>(total_steps * static_cast<long>(cfg.warmup_epochs) /
                        static_cast<long>(cfg.epochs));
  return lr_at(step, total_steps, warmup_steps, cfg.base_lr);
}

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"lr", lr}, {"loss", loss}, {"train_acc", train_acc},
            {"val_acc", val_acc}};
  }
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t train_items = 0;
  std::size_t val_items = 0;

  double best_train_acc() const {
    double best = 0.0;
    for (const auto& e : epochs) best = std::max(best, e.train_acc);
    return best;
  }
};

/// Classic SGD with momentum; weight decay is added to the gradient.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (Parameter* p : params_) velocity_.emplace_back(p->value.shape());
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter* p = params_[i];
      if (!p->trainable) continue;
      Tensor& v = velocity_[i];
      for (std::size_t k = 0; k < p->value.numel(); ++k) {
        const double g = p->grad[k] + weight_decay_ * p->value[k];
        v[k] = momentum_ * v[k] + g;
        p->value[k] -= lr * v[k];
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Loads images once and keeps them decoded.
class ImageCache {
 public:
  const Image& get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(path, read_ppm(path)).first->second;
  }

 private:
  std::map<std::string, Image> cache_;
};

inline void save_checkpoint(const std::string& path, DolgModel& model, ArcFaceHead* head,
                            const nlohmann::json& metadata) {
  TensorManifest m;
  m.metadata = metadata.dump();
  model.to_manifest(m);
  if (head) m.add(head->weights.name, head->weights.value);
  write_manifest(path, m);
}

/// ArcFace classification training over image-level labels with the warmup +
/// cosine schedule. Single-writer parameter updates; evaluation reads the
/// in-memory snapshot between epochs.
class Trainer {
 public:
  Trainer(DolgModel& model, const TrainConfig& cfg, std::uint64_t seed)
      : model_(model), cfg_(cfg), seed_(seed) {
    cfg_.validate();
  }

  ArcFaceHead& head() { return head_; }

  TrainReport train(const LabeledDataset& ds,
                    const std::function<void(const EpochStats&)>& on_epoch = {}) {
    if (ds.items.empty()) throw invalid_input_error("train: dataset is empty");
    if (ds.class_count < 2) throw invalid_input_error("train: need at least 2 classes");

    const SplitIndices split = stratified_split(ds, cfg_.split_fraction, seed_);
    head_.margin = cfg_.margin;
    head_.scale = cfg_.gamma;
    Rng head_rng(seed_ ^ 0x9e3779b97f4a7c15ull);
    head_.init(head_rng, ds.class_count, DolgModel::kDescriptorDim);

    std::vector<Parameter*> all_params = model_.params();
    head_.collect(all_params);
    SgdOptimizer opt(all_params, cfg_.momentum, cfg_.weight_decay);

    const std::size_t n_train = split.train.size();
    const std::size_t steps_per_epoch = (n_train + cfg_.batch_size - 1) / cfg_.batch_size;
    const long total_steps = static_cast<long>(cfg_.epochs * steps_per_epoch);
    const long warmup_steps = static_cast<long>(cfg_.warmup_epochs * steps_per_epoch);

    Rng rng(seed_ + 1);
    TrainReport report;
    report.train_items = split.train.size();
    report.val_items = split.val.size();

    long step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<std::size_t> order = split.train;
      rng.shuffle(order);

      double loss_sum = 0.0;
      std::size_t correct = 0, seen = 0;
      const double epoch_lr = lr_at(step, total_steps, warmup_steps, cfg_.base_lr);

      for (std::size_t b = 0; b < n_train; b += cfg_.batch_size, ++step) {
        const std::size_t bend = std::min(b + cfg_.batch_size, n_train);
        std::vector<Tensor> inputs;
        std::vector<std::size_t> labels;
        inputs.reserve(bend - b);
        for (std::size_t k = b; k < bend; ++k) {
          const LabeledItem& item = ds.items[order[k]];
          const Image& src = images_.get(item.path);
          const Image prepared = cfg_.augment
                                     ? random_resized_crop(src, rng, cfg_.aug, cfg_.image_size)
                                     : resize_bilinear(src, cfg_.image_size, cfg_.image_size);
          inputs.push_back(to_model_input(prepared));
          labels.push_back(static_cast<std::size_t>(ds.items[order[k]].label));
        }

        opt.zero_grad();
        Tape tape;
        const std::vector<Var> descriptors = model_.forward_batch(tape, inputs, /*training=*/true);
        Var head_leaf = tape.use(head_.weights);
        std::vector<Var> losses;
        losses.reserve(descriptors.size());
        for (std::size_t i = 0; i < descriptors.size(); ++i) {
          Var loss = head_.loss_with(head_leaf, descriptors[i], labels[i]);
          const double lv = loss.value()[0];
          if (!std::isfinite(lv))
            throw invalid_input_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", step " + std::to_string(step) + ", item " +
                                      ds.items[order[b + i]].id);
          losses.push_back(loss);
          loss_sum += lv;
          if (head_.predict(descriptors[i].value()) == labels[i]) ++correct;
          ++seen;
        }
        tape.backward(ad::mean_scalars(losses));
        opt.step(lr_at(step, total_steps, warmup_steps, cfg_.base_lr));
      }

      EpochStats stats;
      stats.epoch = epoch;
      stats.lr = epoch_lr;
      stats.loss = loss_sum / static_cast<double>(seen);
      stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
      stats.val_acc = validate_split(ds, split.val);
      report.epochs.push_back(stats);
      if (on_epoch) on_epoch(stats);
    }
    return report;
  }

 private:
  double validate_split(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i : idx) {
      const LabeledItem& item = ds.items[i];
      const Image prepared =
          resize_bilinear(images_.get(item.path), cfg_.image_size, cfg_.image_size);
      const Tensor d = model_.descriptor(to_model_input(prepared));
      if (head_.predict(d) == static_cast<std::size_t>(item.label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  }

  DolgModel& model_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  ArcFaceHead head_;
  ImageCache images_;
};

}  // namespace dolg
