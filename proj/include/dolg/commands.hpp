// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dolg/ablation.hpp"
#include "dolg/config.hpp"
#include "dolg/dataset.hpp"
#include "dolg/evaluation.hpp"
#include "dolg/extraction.hpp"
#include "dolg/model.hpp"
#include "dolg/train.hpp"

namespace dolg {

struct TrainOutputs {
  std::string checkpoint;
  std::string report;
  std::string config_snapshot;
  TrainReport stats;
};

/// Trains per the run configuration. Writes, under `out_dir`: the resolved
/// config snapshot, a line-delimited epoch report, and the final checkpoint.
inline TrainOutputs cmd_train(const RunConfig& cfg, const std::string& manifest_path,
                              const std::string& out_dir, std::ostream* log = nullptr) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  TrainOutputs out;
  out.config_snapshot = (fs::path(out_dir) / "config.json").string();
  out.report = (fs::path(out_dir) / "report.jsonl").string();
  out.checkpoint = (fs::path(out_dir) / "checkpoint.dolg").string();

  {
    std::ofstream cf(out.config_snapshot);
    cf << cfg.to_json().dump(2) << "\n";
  }

  const LabeledDataset ds = load_dataset_manifest(manifest_path);
  DolgModel model(cfg.model_config(), cfg.seed);
  if (!cfg.backbone_weights.empty()) model.load(read_manifest(cfg.backbone_weights), /*partial=*/true);

  Trainer trainer(model, cfg.train_config(), cfg.seed);
  std::ofstream report_stream(out.report);
  if (!report_stream) throw data_error("cannot write training report: " + out.report);
  out.stats = trainer.train(ds, [&](const EpochStats& e) {
    report_stream << e.to_json().dump() << "\n";
    report_stream.flush();
    if (log)
      (*log) << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " train_acc "
             << e.train_acc << " val_acc " << e.val_acc << "\n";
  });

  nlohmann::json meta;
  meta["epoch"] = cfg.train.epochs;
  meta["seed"] = cfg.seed;
  meta["config_hash"] = cfg.hash();
  save_checkpoint(out.checkpoint, model, &trainer.head(), meta);
  return out;
}

/// Builds the model from a checkpoint and extracts one multi-scale descriptor
/// per manifest entry into a store file. When a ground-truth file is given,
/// query crop regions are applied before extraction.
inline void cmd_extract(const RunConfig& cfg, const std::string& checkpoint,
                        const std::string& input_manifest, const std::string& output_store,
                        const std::string& crops_gt = "", std::ostream* log = nullptr) {
  cfg.validate();
  DolgModel model(cfg.model_config(), cfg.seed);
  model.load(read_manifest(checkpoint));

  std::map<std::string, std::array<std::size_t, 4>> crops;
  if (!crops_gt.empty()) {
    const RetrievalGroundTruth gt = load_ground_truth(crops_gt);
    for (const QueryGt& q : gt.queries)
      if (q.crop) crops[q.id] = *q.crop;
  }

  const LabeledDataset ds = load_dataset_manifest(input_manifest);
  if (ds.items.empty()) throw invalid_input_error("extract: manifest lists no images");
  const ScaleSet scales = cfg.scale_set();
  DescriptorStore store(DolgModel::kDescriptorDim);
  std::vector<std::string> warnings;
  for (const LabeledItem& item : ds.items) {
    Image img = read_ppm(item.path);
    const auto crop_it = crops.find(item.id);
    if (crop_it != crops.end()) {
      const auto& c = crop_it->second;
      img = crop(img, c[0], c[1], c[2], c[3]);
    }
    store.add(item.id, extract_multiscale(model, img, scales, cfg.extract_strict, &warnings));
  }
  for (const std::string& w : warnings)
    if (log) (*log) << "warning: " << w << "\n";
  store.write(output_store);
}

inline EvalReport cmd_evaluate(const std::string& gt_path, const std::string& db_store_path,
                               const std::string& query_store_path,
                               const std::string& out_report = "") {
  const RetrievalGroundTruth gt = load_ground_truth(gt_path);
  const DescriptorStore db = DescriptorStore::read(db_store_path);
  const DescriptorStore queries = DescriptorStore::read(query_store_path);
  const EvalReport report = evaluate(gt, db, queries);
  if (!out_report.empty()) {
    std::ofstream out(out_report);
    if (!out) throw data_error("cannot write report: " + out_report);
    out << report.to_json().dump(2) << "\n";
  }
  return report;
}

inline std::string resolve_workdir(const std::string& requested, const std::string& out_dir) {
  if (!requested.empty()) return requested;
  if (const char* env = std::getenv("DOLG_CACHE_DIR"); env && *env) return env;
  return (std::filesystem::path(out_dir) / "work").string();
}

/// Full grid: every row trains, extracts, and evaluates on the same data with
/// the same seed. Emits the table as text and JSON under `out_dir`.
inline AblationTable cmd_ablate(const RunConfig& base, const std::string& grid_path,
                                const std::string& manifest, const std::string& queries_manifest,
                                const std::string& gt_path, const std::string& out_dir,
                                const std::string& workdir_requested = "",
                                std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string workdir = resolve_workdir(workdir_requested, out_dir);

  const std::vector<AblationRow> rows = load_ablation_grid(grid_path);
  std::size_t cell_index = 0;
  AblationTable table = run_grid(
      base, rows, [&](const RunConfig& cfg, const std::string& name, double* train_acc) {
        std::string cell_dir =
            (fs::path(workdir) / ("cell" + std::to_string(cell_index++))).string();
        fs::create_directories(cell_dir);
        if (log) (*log) << "[ablate] running '" << name << "'\n";
        const TrainOutputs trained = cmd_train(cfg, manifest, cell_dir);
        *train_acc = trained.stats.best_train_acc();
        const std::string db_store = (fs::path(cell_dir) / "db.store").string();
        const std::string q_store = (fs::path(cell_dir) / "queries.store").string();
        cmd_extract(cfg, trained.checkpoint, manifest, db_store, "");
        cmd_extract(cfg, trained.checkpoint, queries_manifest, q_store, gt_path);
        return cmd_evaluate(gt_path, db_store, q_store,
                            (fs::path(cell_dir) / "eval.json").string());
      });

  {
    std::ofstream out((fs::path(out_dir) / "ablation_table.txt").string());
    out << table.to_text();
  }
  {
    std::ofstream out((fs::path(out_dir) / "ablation_table.json").string());
    out << table.to_json().dump(2) << "\n";
  }
  return table;
}

}  // namespace dolg
