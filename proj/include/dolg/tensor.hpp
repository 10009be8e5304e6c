// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dolg/error.hpp"

namespace dolg {

/// Dense row-major tensor of doubles. Rank is dynamic (0..4 used in practice).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) n *= d;
    data_.assign(n, 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) n *= d;
    if (n != data_.size()) throw shape_error("tensor: shape/value count mismatch");
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({std::size_t{1}}, {v}); }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const {
    assert(i < shape_.size());
    return shape_[i];
  }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) {
    assert(i < data_.size());
    return data_[i];
  }
  double operator[](std::size_t i) const {
    assert(i < data_.size());
    return data_[i];
  }

  // rank-2 access (rows, cols)
  double& at2(std::size_t r, std::size_t c) {
    assert(rank() == 2);
    return data_[r * shape_[1] + c];
  }
  double at2(std::size_t r, std::size_t c) const {
    assert(rank() == 2);
    return data_[r * shape_[1] + c];
  }

  // rank-3 access (channels, height, width)
  double& at3(std::size_t c, std::size_t y, std::size_t x) {
    assert(rank() == 3);
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at3(std::size_t c, std::size_t y, std::size_t x) const {
    assert(rank() == 3);
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  // rank-4 access (out channels, in channels, ky, kx)
  double& at4(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    assert(rank() == 4);
    return data_[((o * shape_[1] + i) * shape_[2] + y) * shape_[3] + x];
  }
  double at4(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    assert(rank() == 4);
    return data_[((o * shape_[1] + i) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw shape_error("dot: size mismatch " + a.shape_str() + " vs " + b.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * a[i];
  return s;
}

inline double norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw shape_error("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Deterministic RNG: mt19937_64 core with a hand-rolled Box-Muller normal so
/// the stream does not depend on the standard library's distribution details.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    assert(n > 0);
    return static_cast<std::size_t>(gen_() % n);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    assert(hi >= lo);
    return lo + static_cast<int>(index(static_cast<std::size_t>(hi - lo) + 1));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * normal();
    return t;
  }

  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dolg
