// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dolg/config.hpp"
#include "dolg/evaluation.hpp"

namespace dolg {

/// One grid row: a named set of overrides on the base run configuration.
/// Recognized override keys mirror the ablation axes; anything else is an
/// error. Loss overrides (margin/gamma) are allowed per row because some
/// fusion modes need a different margin to converge.
struct AblationRow {
  std::string name;
  nlohmann::json overrides;  // object

  RunConfig apply_to(const RunConfig& base) const {
    static const std::map<std::string, std::string> key_map = {
        {"fusion_location", "fusion.location"}, {"global_pool", "global.pool"},
        {"fusion_pool", "fusion.pool"},         {"fusion_mode", "fusion.mode"},
        {"multi_atrous", "local.multi_atrous"}, {"self_attention", "local.self_attention"},
        {"margin", "train.margin"},             {"gamma", "train.gamma"},
    };
    RunConfig cfg = base;
    bool global_only = false;
    if (overrides.contains("fusion_location"))
      global_only = overrides["fusion_location"].get<std::string>() == "global_only";
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
      const auto mapped = key_map.find(it.key());
      if (mapped == key_map.end())
        throw config_error("ablation row '" + name + "': unknown axis '" + it.key() + "'");
      if (global_only && (it.key() == "fusion_pool" || it.key() == "fusion_mode" ||
                          it.key() == "multi_atrous" || it.key() == "self_attention"))
        throw config_error("ablation row '" + name + "': '" + it.key() +
                           "' conflicts with fusion_location=global_only");
      cfg.apply(mapped->second, it.value());
    }
    cfg.validate();
    return cfg;
  }
};

inline std::vector<AblationRow> load_ablation_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open ablation grid: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("ablation grid " + path + ": " + e.what());
  }
  if (!j.contains("rows") || !j["rows"].is_array() || j["rows"].empty())
    throw config_error("ablation grid " + path + ": expected a non-empty 'rows' array");
  std::vector<AblationRow> rows;
  for (const auto& rj : j["rows"]) {
    AblationRow row;
    if (!rj.contains("name")) throw config_error("ablation grid: every row needs a 'name'");
    row.name = rj["name"].get<std::string>();
    row.overrides = rj;
    row.overrides.erase("name");
    rows.push_back(std::move(row));
  }
  return rows;
}

struct AblationResult {
  std::string name;
  double map_easy = 0.0, map_medium = 0.0, map_hard = 0.0;
  double mp10_medium = 0.0, mp10_hard = 0.0;
  double train_acc = 0.0;
  std::uint64_t config_hash = 0;
};

struct AblationTable {
  std::vector<AblationResult> rows;

  std::string to_text() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-24s %8s %8s %8s %8s %8s\n", "name", "mAP-E", "mAP-M",
                  "mAP-H", "mP10-M", "mP10-H");
    out += buf;
    for (const AblationResult& r : rows) {
      std::snprintf(buf, sizeof(buf), "%-24s %8.4f %8.4f %8.4f %8.4f %8.4f\n", r.name.c_str(),
                    r.map_easy, r.map_medium, r.map_hard, r.mp10_medium, r.mp10_hard);
      out += buf;
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const AblationResult& r : rows)
      j.push_back({{"name", r.name},
                   {"map_easy", r.map_easy},
                   {"map_medium", r.map_medium},
                   {"map_hard", r.map_hard},
                   {"mp10_medium", r.mp10_medium},
                   {"mp10_hard", r.mp10_hard},
                   {"train_acc", r.train_acc},
                   {"config_hash", r.config_hash}});
    return j;
  }
};

/// Runs every grid row with the shared seed, varying only the row's axes:
/// train, extract database + queries, evaluate. Row order is the grid file
/// order, so bundled grids can mirror the published table layouts.
inline AblationTable run_grid(
    const RunConfig& base, const std::vector<AblationRow>& rows,
    const std::function<EvalReport(const RunConfig&, const std::string&, double*)>& run_cell) {
  AblationTable table;
  for (const AblationRow& row : rows) {
    const RunConfig cfg = row.apply_to(base);
    double train_acc = 0.0;
    const EvalReport rep = run_cell(cfg, row.name, &train_acc);
    AblationResult res;
    res.name = row.name;
    res.map_easy = rep.map_easy;
    res.map_medium = rep.map_medium;
    res.map_hard = rep.map_hard;
    res.mp10_medium = rep.mp10_medium;
    res.mp10_hard = rep.mp10_hard;
    res.train_acc = train_acc;
    res.config_hash = cfg.hash();
    table.rows.push_back(res);
  }
  return table;
}

}  // namespace dolg
