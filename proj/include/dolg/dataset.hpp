// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dolg/error.hpp"
#include "dolg/ground_truth.hpp"
#include "dolg/image.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

struct LabeledItem {
  std::string path;  // resolved (absolute or relative to cwd)
  std::string id;    // file stem, used as store/ground-truth identifier
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledItem> items;
  std::size_t class_count = 0;
};

inline std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

/// Manifest: one record per line, "<image path> <integer label>". Relative
/// paths are resolved against the manifest's directory.
inline LabeledDataset load_dataset_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw data_error("cannot open dataset manifest: " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  LabeledDataset ds;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string path;
    long label = -1;
    if (!(ls >> path >> label) || label < 0)
      throw data_error("manifest " + manifest_path + ": bad record at line " +
                       std::to_string(line_no));
    std::filesystem::path p(path);
    if (p.is_relative()) p = base / p;
    ds.items.push_back({p.string(), path_stem(path), static_cast<int>(label)});
    max_label = std::max(max_label, static_cast<int>(label));
  }
  ds.class_count = static_cast<std::size_t>(max_label + 1);
  return ds;
}

inline void save_dataset_manifest(const std::string& manifest_path,
                                  const std::vector<std::pair<std::string, int>>& records) {
  std::ofstream out(manifest_path);
  if (!out) throw data_error("cannot write manifest: " + manifest_path);
  for (const auto& [path, label] : records) out << path << " " << label << "\n";
}

/// Seeded stratified split: per class, round(fraction*n) items go to train,
/// clamped so every class with >= 2 items keeps at least one item per side.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline SplitIndices stratified_split(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw config_error("split fraction must lie in (0,1), got " + std::to_string(fraction));
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.items.size(); ++i) by_class[ds.items[i].label].push_back(i);
  Rng rng(seed);
  SplitIndices out;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    std::size_t n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
    if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    if (n == 1) n_train = 1;
    for (std::size_t k = 0; k < n; ++k)
      (k < n_train ? out.train : out.val).push_back(idx[k]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double scale_min = 0.6;  // area fraction of the source image
  double scale_max = 1.0;
  double aspect_min = 0.75;
  double aspect_max = 4.0 / 3.0;
};

/// Random crop with aspect distortion, then resize to a square.
inline Image random_resized_crop(const Image& img, Rng& rng, const AugmentConfig& cfg,
                                 std::size_t out_size) {
  const double area = static_cast<double>(img.height) * static_cast<double>(img.width);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(cfg.scale_min, cfg.scale_max);
    const double aspect = std::exp(rng.uniform(std::log(cfg.aspect_min), std::log(cfg.aspect_max)));
    const auto cw = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    const auto ch = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= img.width && ch <= img.height) {
      const std::size_t x = rng.index(img.width - cw + 1);
      const std::size_t y = rng.index(img.height - ch + 1);
      return resize_bilinear(crop(img, x, y, cw, ch), out_size, out_size);
    }
  }
  const std::size_t side = std::min(img.height, img.width);
  const std::size_t x = (img.width - side) / 2, y = (img.height - side) / 2;
  return resize_bilinear(crop(img, x, y, side, side), out_size, out_size);
}

// ---------------------------------------------------------------------------
// synthetic toy dataset
// ---------------------------------------------------------------------------

struct ToyDatasetFiles {
  std::string dir;
  std::string manifest;          // all images, labeled (training + database)
  std::string queries_manifest;  // one query per class
  std::string ground_truth;      // JSON retrieval ground truth
};

namespace detail {
inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double tt = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = tt; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = tt; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = tt; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}
}  // namespace detail

/// One synthetic image: a class-specific hue + periodic pattern, perturbed by
/// noise/brightness/hue jitter whose strength grows with `severity` in [0,1].
inline Image render_toy_image(std::size_t cls, double severity, std::size_t size, Rng& rng) {
  const double hue = std::fmod(0.61803398875 * static_cast<double>(cls), 1.0);
  const int pattern = static_cast<int>(cls % 4);
  const double freq = 1.5 + static_cast<double>((cls / 4) % 4);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double hue_jitter = rng.uniform(-1.0, 1.0) * (0.01 + 0.02 * severity);
  const double brightness = 1.0 + rng.uniform(-1.0, 1.0) * (0.05 + 0.15 * severity);
  const double noise_sigma = 0.01 + 0.12 * severity;

  Image img = Image::blank(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double yn = static_cast<double>(y) / static_cast<double>(size);
      const double xn = static_cast<double>(x) / static_cast<double>(size);
      double t = 0.0;
      switch (pattern) {
        case 0: t = std::sin(6.283185307179586 * freq * yn + phase); break;
        case 1: t = std::sin(6.283185307179586 * freq * xn + phase); break;
        case 2:
          t = std::sin(6.283185307179586 * freq * xn + phase) *
              std::sin(6.283185307179586 * freq * yn + phase);
          break;
        default: {
          const double r = std::hypot(xn - 0.5, yn - 0.5);
          t = std::sin(6.283185307179586 * freq * 2.0 * r + phase);
          break;
        }
      }
      const double value = 0.35 + 0.5 * (0.5 + 0.5 * t);
      double r, g, b;
      detail::hsv_to_rgb(hue + hue_jitter, 0.65, value, r, g, b);
      img.at(0, y, x) = std::clamp(r * brightness + noise_sigma * rng.normal(), 0.0, 1.0);
      img.at(1, y, x) = std::clamp(g * brightness + noise_sigma * rng.normal(), 0.0, 1.0);
      img.at(2, y, x) = std::clamp(b * brightness + noise_sigma * rng.normal(), 0.0, 1.0);
    }
  }
  return img;
}

/// Writes the bundled toy dataset: `classes x per_class` PPM images, a labeled
/// manifest, a query manifest (instance 0 of each class), and a retrieval
/// ground truth splitting each class's remaining instances into easy/hard/junk
/// by perturbation severity. Every query lists itself as junk, mirroring the
/// usual landmark-retrieval convention; the first two queries carry a crop
/// region to exercise the cropped-query path.
inline ToyDatasetFiles generate_toy_dataset(const std::string& dir, std::size_t classes,
                                            std::size_t per_class, std::size_t size,
                                            std::uint64_t seed) {
  if (classes < 2 || per_class < 4) throw config_error("toy dataset needs >= 2 classes, >= 4 images each");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");

  RetrievalGroundTruth gt;
  std::vector<std::pair<std::string, int>> records;        // relative path, label
  std::vector<std::pair<std::string, int>> query_records;  // relative path, label
  Rng rng(seed);

  for (std::size_t c = 0; c < classes; ++c) {
    QueryGt q;
    for (std::size_t k = 0; k < per_class; ++k) {
      const double severity =
          per_class > 1 ? static_cast<double>(k) / static_cast<double>(per_class - 1) : 0.0;
      char name[64];
      std::snprintf(name, sizeof(name), "c%02zu_k%02zu", c, k);
      const std::string rel = std::string("images/") + name + ".ppm";
      write_ppm((fs::path(dir) / rel).string(), render_toy_image(c, severity, size, rng));
      records.emplace_back(rel, static_cast<int>(c));
      gt.database.emplace_back(name);

      if (k == 0) {
        q.id = name;
        q.junk.emplace_back(name);  // the query itself is junked
        query_records.emplace_back(rel, static_cast<int>(c));
      } else if (severity <= 0.45) {
        q.easy.emplace_back(name);
      } else if (severity <= 0.88) {
        q.hard.emplace_back(name);
      } else {
        q.junk.emplace_back(name);
      }
    }
    if (c < 2 && size >= 16) q.crop = std::array<std::size_t, 4>{4, 4, size - 8, size - 8};
    gt.queries.push_back(std::move(q));
  }

  ToyDatasetFiles files;
  files.dir = dir;
  files.manifest = (fs::path(dir) / "manifest.txt").string();
  files.queries_manifest = (fs::path(dir) / "queries.txt").string();
  files.ground_truth = (fs::path(dir) / "gt.json").string();
  save_dataset_manifest(files.manifest, records);
  save_dataset_manifest(files.queries_manifest, query_records);
  gt.validate();
  save_ground_truth(files.ground_truth, gt);
  return files;
}

}  // namespace dolg
