// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dolg/error.hpp"
#include "dolg/image.hpp"
#include "dolg/manifest.hpp"
#include "dolg/model.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

struct ScaleSet {
  std::vector<double> scales{0.3535, 0.5, 0.7071, 1.0, 1.4142};

  void validate() const {
    if (scales.empty()) throw config_error("scale set must be non-empty");
    for (double s : scales)
      if (!(s > 0.0)) throw config_error("scales must be positive, got " + std::to_string(s));
  }
};

/// Scales a vector to unit L2 norm. Vectors already unit to within 1e-12 in
/// squared norm are returned unchanged, which makes the operation idempotent
/// at the bit level (re-normalizing a normalized vector is a no-op).
inline Tensor normalize_unit(const Tensor& v) {
  const double n2 = squared_norm(v);
  if (n2 < 1e-30) throw degenerate_global_error("normalize: vector norm is numerically zero");
  if (std::abs(n2 - 1.0) <= 1e-12) return v;
  Tensor out(v.shape());
  const double inv = 1.0 / std::sqrt(n2);
  for (std::size_t i = 0; i < v.numel(); ++i) out[i] = v[i] * inv;
  return out;
}

/// Multi-scale descriptor: resize by each factor, forward, L2-normalize,
/// average the normalized vectors, and L2-normalize the mean. In strict mode
/// any scale whose resized image falls below the backbone minimum is an
/// error; otherwise it is skipped with a warning.
inline Tensor extract_multiscale(DolgModel& model, const Image& image, const ScaleSet& scales,
                                 bool strict = true, std::vector<std::string>* warnings = nullptr) {
  scales.validate();
  const auto min_side = static_cast<std::size_t>(model.config().backbone.stage4_stride);
  Tensor sum({DolgModel::kDescriptorDim});
  std::size_t used = 0;
  for (double s : scales.scales) {
    const auto oh = static_cast<std::size_t>(std::llround(static_cast<double>(image.height) * s));
    const auto ow = static_cast<std::size_t>(std::llround(static_cast<double>(image.width) * s));
    if (oh < min_side || ow < min_side) {
      const std::string msg = "scale " + std::to_string(s) + " gives " + std::to_string(ow) + "x" +
                              std::to_string(oh) + ", below backbone minimum " +
                              std::to_string(min_side);
      if (strict) throw invalid_input_error("extract: " + msg);
      if (warnings) warnings->push_back("skipped: " + msg);
      continue;
    }
    const Image resized = resize_bilinear(image, oh, ow);
    const Tensor d = normalize_unit(model.descriptor(to_model_input(resized)));
    for (std::size_t i = 0; i < d.numel(); ++i) sum[i] += d[i];
    ++used;
  }
  if (used == 0) throw invalid_input_error("extract: every scale fell below the backbone minimum");
  for (std::size_t i = 0; i < sum.numel(); ++i) sum[i] /= static_cast<double>(used);
  return normalize_unit(sum);
}

/// In-memory descriptor store: unique string ids with float32 unit vectors.
class DescriptorStore {
 public:
  explicit DescriptorStore(std::size_t dim = 512) : dim_(dim) {
    if (dim_ == 0) throw config_error("descriptor store: dim must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// Adds a descriptor; it must convert to a float32 vector that is unit to
  /// within 1e-5.
  void add(const std::string& id, const Tensor& v) {
    if (v.numel() != dim_)
      throw shape_error("store: descriptor dim " + std::to_string(v.numel()) +
                        " does not match store dim " + std::to_string(dim_));
    if (!id_set_.insert(id).second) throw data_error("store: duplicate id '" + id + "'");
    std::vector<float> row(dim_);
    double n2 = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      row[i] = static_cast<float>(v[i]);
      n2 += static_cast<double>(row[i]) * static_cast<double>(row[i]);
    }
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-5) {
      id_set_.erase(id);
      throw invalid_input_error("store: vector for '" + id + "' has norm " +
                                std::to_string(std::sqrt(n2)) + ", not unit within 1e-5");
    }
    ids_.push_back(id);
    data_.insert(data_.end(), row.begin(), row.end());
  }

  const float* row(std::size_t i) const { return data_.data() + i * dim_; }

  long find(const std::string& id) const {
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return static_cast<long>(i);
    return -1;
  }

  /// Row as doubles.
  Tensor vector_at(std::size_t i) const {
    Tensor t({dim_});
    for (std::size_t k = 0; k < dim_; ++k) t[k] = static_cast<double>(row(i)[k]);
    return t;
  }

  bool bitwise_equal(const DescriptorStore& other) const {
    if (dim_ != other.dim_ || ids_ != other.ids_ || data_.size() != other.data_.size()) return false;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      std::uint32_t a, b;
      std::memcpy(&a, &data_[i], 4);
      std::memcpy(&b, &other.data_[i], 4);
      if (a != b) return false;
    }
    return true;
  }

  // File format (little endian):
  //   magic "DLGS" | u32 version | u32 dim | u64 count |
  //   f32 vectors[count*dim] | { u32 id_len | id bytes }*
  void write(const std::string& path) const {
    for (std::size_t i = 0; i < count(); ++i) {
      double n2 = 0.0;
      for (std::size_t k = 0; k < dim_; ++k)
        n2 += static_cast<double>(row(i)[k]) * static_cast<double>(row(i)[k]);
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-5)
        throw invalid_input_error("store_write: vector for '" + ids_[i] + "' is not unit");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write store: " + path);
    out.write("DLGS", 4);
    wire::put_u32(out, 1);
    wire::put_u32(out, static_cast<std::uint32_t>(dim_));
    wire::put_u64(out, count());
    for (float f : data_) wire::put_f32(out, f);
    for (const std::string& id : ids_) {
      wire::put_u32(out, static_cast<std::uint32_t>(id.size()));
      out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
    if (!out) throw data_error("short write: " + path);
  }

  static DescriptorStore read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open store: " + path);
    wire::Reader r(in);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "DLGS", 4) != 0) throw format_error("store: bad magic", 0);
    const std::uint32_t version = r.u32("version");
    if (version != 1) throw format_error("store: unsupported version " + std::to_string(version), 4);
    const std::uint32_t dim = r.u32("dim");
    if (dim == 0) throw format_error("store: zero dim", 8);
    const std::uint64_t count = r.u64("count");
    if (count > (1ull << 32)) throw format_error("store: implausible count", 12);
    DescriptorStore store(dim);
    store.data_.resize(static_cast<std::size_t>(count) * dim);
    for (std::size_t i = 0; i < store.data_.size(); ++i) store.data_[i] = r.f32("vector payload");
    store.ids_.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t len = r.u32("id length");
      if (len > 4096) throw format_error("store: implausible id length", r.offset - 4);
      std::string id(len, '\0');
      if (len) r.bytes(id.data(), len, "id bytes");
      if (!store.id_set_.insert(id).second)
        throw format_error("store: duplicate id '" + id + "'", r.offset - len);
      store.ids_.push_back(std::move(id));
    }
    if (!r.at_eof()) throw format_error("store: trailing bytes after last id", r.offset);
    return store;
  }

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_set<std::string> id_set_;
};

}  // namespace dolg
