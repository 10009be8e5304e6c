// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / extract / evaluate / ablate / selftest /
// gen-data. Configuration comes from an optional JSON file with flat dotted
// keys plus --set overrides; every command is deterministic given the
// resolved config and seed.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dolg/commands.hpp"
#include "dolg/dataset.hpp"
#include "dolg/selftest.hpp"

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  long seed = -1;
  std::string device;
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "JSON config file with flat dotted keys");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set train.base_lr=0.1");
  cmd->add_option("--seed", args.seed, "override the run seed");
  cmd->add_option("--device", args.device, "compute device (only 'cpu')");
  cmd->add_flag("--print-config", args.print_config, "print the fully resolved config and exit");
}

dolg::RunConfig resolve_config(const CommonArgs& args) {
  dolg::RunConfig cfg;
  if (!args.config_file.empty()) cfg = dolg::RunConfig::load(args.config_file);
  for (const std::string& kv : args.overrides) cfg.apply_override(kv);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.device.empty()) cfg.device = args.device;
  cfg.validate();
  return cfg;
}

// Machine-readable error record on stderr, nonzero exit.
int fail(const char* type, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-stage image retrieval with orthogonal local/global feature fusion"};
  app.require_subcommand(1);

  CommonArgs train_args, extract_args, eval_args, ablate_args, gen_args, selftest_args;

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a labeled manifest");
  std::string train_manifest, train_out = "runs/train";
  train_cmd->add_option("--manifest", train_manifest, "dataset manifest: '<path> <label>' per line")
      ->required();
  train_cmd->add_option("--out", train_out, "run directory for config/report/checkpoint");
  add_common(train_cmd, train_args);

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "extract multi-scale descriptors into a store");
  std::string ex_input, ex_output, ex_checkpoint, ex_crops;
  extract_cmd->add_option("--input", ex_input, "manifest of images to extract")->required();
  extract_cmd->add_option("--output", ex_output, "descriptor store file to write")->required();
  extract_cmd->add_option("--checkpoint", ex_checkpoint, "trained checkpoint")->required();
  extract_cmd->add_option("--crops", ex_crops,
                          "ground-truth JSON whose query crop regions are applied before extraction");
  add_common(extract_cmd, extract_args);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "rank and score stores against a ground truth");
  std::string ev_gt, ev_db, ev_queries, ev_out;
  eval_cmd->add_option("--gt", ev_gt, "retrieval ground-truth JSON")->required();
  eval_cmd->add_option("--db-store", ev_db, "database descriptor store")->required();
  eval_cmd->add_option("--query-store", ev_queries, "query descriptor store")->required();
  eval_cmd->add_option("--out", ev_out, "report JSON path");
  add_common(eval_cmd, eval_args);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run a configuration grid end to end");
  std::string ab_grid, ab_manifest, ab_queries, ab_gt, ab_out = "runs/ablate", ab_work;
  ablate_cmd->add_option("--grid", ab_grid, "grid JSON: {\"rows\":[{\"name\":...,axes...}]}")
      ->required();
  ablate_cmd->add_option("--manifest", ab_manifest, "training + database manifest")->required();
  ablate_cmd->add_option("--queries", ab_queries, "query manifest")->required();
  ablate_cmd->add_option("--gt", ab_gt, "retrieval ground truth")->required();
  ablate_cmd->add_option("--out", ab_out, "output directory for the comparison table");
  ablate_cmd->add_option("--workdir", ab_work,
                         "scratch directory for per-cell runs (default: $DOLG_CACHE_DIR or <out>/work)");
  add_common(ablate_cmd, ablate_args);

  // selftest
  auto* selftest_cmd = app.add_subcommand("selftest", "run the built-in invariant suites");
  add_common(selftest_cmd, selftest_args);

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic toy dataset");
  std::string gen_dir = "data/toy";
  std::size_t gen_classes = 16, gen_per_class = 32, gen_size = 64;
  gen_cmd->add_option("--dir", gen_dir, "output directory");
  gen_cmd->add_option("--classes", gen_classes, "number of classes");
  gen_cmd->add_option("--per-class", gen_per_class, "images per class");
  gen_cmd->add_option("--size", gen_size, "image side length in pixels");
  add_common(gen_cmd, gen_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const dolg::RunConfig cfg = resolve_config(train_args);
      if (train_args.print_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
      }
      const dolg::TrainOutputs out = dolg::cmd_train(cfg, train_manifest, train_out, &std::cout);
      std::cout << "checkpoint: " << out.checkpoint << "\nreport: " << out.report << "\n";
      return 0;
    }
    if (*extract_cmd) {
      const dolg::RunConfig cfg = resolve_config(extract_args);
      if (extract_args.print_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
      }
      dolg::cmd_extract(cfg, ex_checkpoint, ex_input, ex_output, ex_crops, &std::cerr);
      std::cout << "store: " << ex_output << "\n";
      return 0;
    }
    if (*eval_cmd) {
      const dolg::RunConfig cfg = resolve_config(eval_args);
      if (eval_args.print_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
      }
      (void)cfg;
      const dolg::EvalReport rep = dolg::cmd_evaluate(ev_gt, ev_db, ev_queries, ev_out);
      std::printf("map_easy %.4f map_medium %.4f map_hard %.4f mp10_medium %.4f mp10_hard %.4f\n",
                  rep.map_easy, rep.map_medium, rep.map_hard, rep.mp10_medium, rep.mp10_hard);
      for (const std::string& note : rep.notes) std::cout << "note: " << note << "\n";
      return 0;
    }
    if (*ablate_cmd) {
      const dolg::RunConfig cfg = resolve_config(ablate_args);
      if (ablate_args.print_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
      }
      const dolg::AblationTable table =
          dolg::cmd_ablate(cfg, ab_grid, ab_manifest, ab_queries, ab_gt, ab_out, ab_work, &std::cout);
      std::cout << table.to_text();
      return 0;
    }
    if (*selftest_cmd) {
      if (selftest_args.print_config) {
        std::cout << resolve_config(selftest_args).to_json().dump(2) << "\n";
        return 0;
      }
      bool all_pass = true;
      for (const dolg::CheckResult& r : dolg::run_selftest()) {
        std::printf("[selftest] %-28s %s  (%.2fs)  %s\n", r.name.c_str(),
                    r.pass ? "PASS" : "FAIL", r.seconds, r.detail.c_str());
        all_pass = all_pass && r.pass;
      }
      return all_pass ? 0 : 1;
    }
    if (*gen_cmd) {
      const dolg::RunConfig cfg = resolve_config(gen_args);
      const dolg::ToyDatasetFiles files =
          dolg::generate_toy_dataset(gen_dir, gen_classes, gen_per_class, gen_size, cfg.seed);
      std::cout << "manifest: " << files.manifest << "\nqueries: " << files.queries_manifest
                << "\nground truth: " << files.ground_truth << "\n";
      return 0;
    }
  } catch (const dolg::config_error& e) {
    return fail("config", e.what());
  } catch (const dolg::shape_error& e) {
    return fail("shape", e.what());
  } catch (const dolg::format_error& e) {
    return fail("format", e.what());
  } catch (const dolg::invalid_input_error& e) {
    return fail("invalid_input", e.what());
  } catch (const dolg::degenerate_global_error& e) {
    return fail("degenerate_global", e.what());
  } catch (const dolg::index_error& e) {
    return fail("index", e.what());
  } catch (const dolg::data_error& e) {
    return fail("data", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
