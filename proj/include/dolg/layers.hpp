// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dolg/autodiff.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Square-kernel SAME-padded convolution layer.
struct Conv2dLayer {
  Parameter w;
  Parameter b;
  bool has_bias = true;
  int stride = 1;
  int dilation = 1;

  void init(Rng& rng, std::size_t cout, std::size_t cin, int k, int stride_ = 1, int dilation_ = 1,
            bool bias = true) {
    stride = stride_;
    dilation = dilation_;
    has_bias = bias;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    w.set_value(rng.normal_tensor({cout, cin, static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                                  std_dev));
    if (has_bias) b.set_value(Tensor({cout}));
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    w.name = prefix + ".weight";
    out.push_back(&w);
    if (has_bias) {
      b.name = prefix + ".bias";
      out.push_back(&b);
    }
  }

  Var forward(Tape& t, Var x) {
    Var wv = t.use(w);
    std::optional<Var> bv;
    if (has_bias) bv = t.use(b);
    return ad::conv2d(x, wv, bv, stride, dilation);
  }

  // one shared weight leaf across the batch
  std::vector<Var> forward_batch(Tape& t, const std::vector<Var>& xs) {
    Var wv = t.use(w);
    std::optional<Var> bv;
    if (has_bias) bv = t.use(b);
    std::vector<Var> out;
    out.reserve(xs.size());
    for (Var x : xs) out.push_back(ad::conv2d(x, wv, bv, stride, dilation));
    return out;
  }
};

/// Batch normalization. Training uses per-channel statistics over the whole
/// batch and keeps an exponential running average; inference (and the frozen
/// mode) normalizes against the stored running statistics.
struct BatchNormLayer {
  Parameter gamma;
  Parameter beta;
  Parameter run_mean;  // non-trainable
  Parameter run_var;   // non-trainable
  bool frozen = false;
  double eps = 1e-5;
  double stats_momentum = 0.1;

  void init(std::size_t c, bool frozen_ = false) {
    frozen = frozen_;
    gamma.set_value(Tensor::full({c}, 1.0));
    beta.set_value(Tensor({c}));
    run_mean.set_value(Tensor({c}));
    run_var.set_value(Tensor::full({c}, 1.0));
    run_mean.trainable = false;
    run_var.trainable = false;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    gamma.name = prefix + ".gamma";
    beta.name = prefix + ".beta";
    run_mean.name = prefix + ".running_mean";
    run_var.name = prefix + ".running_var";
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&run_mean);
    out.push_back(&run_var);
  }

  /// Single-sample (inference-mode) forward: running statistics.
  Var forward(Tape& t, Var x) {
    return ad::batchnorm_frozen(x, t.use(gamma), t.use(beta), run_mean.value, run_var.value, eps);
  }

  std::vector<Var> forward_batch(Tape& t, const std::vector<Var>& xs, bool training) {
    if (!training || frozen) {
      Var g = t.use(gamma);
      Var b = t.use(beta);
      std::vector<Var> out;
      out.reserve(xs.size());
      for (Var x : xs) out.push_back(ad::batchnorm_frozen(x, g, b, run_mean.value, run_var.value, eps));
      return out;
    }
    Tensor bmean, bvar;
    Var y = ad::batchnorm_nchw(ad::stack(xs), t.use(gamma), t.use(beta), eps, &bmean, &bvar);
    // unbiased variance for the running estimate
    const double count = static_cast<double>(xs.size()) * static_cast<double>(xs[0].value().dim(1)) *
                         static_cast<double>(xs[0].value().dim(2));
    const double correction = count > 1.0 ? count / (count - 1.0) : 1.0;
    for (std::size_t c = 0; c < bmean.numel(); ++c) {
      run_mean.value[c] = (1.0 - stats_momentum) * run_mean.value[c] + stats_momentum * bmean[c];
      run_var.value[c] =
          (1.0 - stats_momentum) * run_var.value[c] + stats_momentum * bvar[c] * correction;
    }
    return ad::unstack(y);
  }
};

/// Fully connected layer.
struct LinearLayer {
  Parameter w;
  Parameter b;
  bool has_bias = true;

  void init(Rng& rng, std::size_t out_dim, std::size_t in_dim, bool bias = true) {
    has_bias = bias;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_dim));
    w.set_value(rng.normal_tensor({out_dim, in_dim}, std_dev));
    if (has_bias) b.set_value(Tensor({out_dim}));
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    w.name = prefix + ".weight";
    out.push_back(&w);
    if (has_bias) {
      b.name = prefix + ".bias";
      out.push_back(&b);
    }
  }

  Var forward(Tape& t, Var x) {
    Var wv = t.use(w);
    std::optional<Var> bv;
    if (has_bias) bv = t.use(b);
    return ad::linear(x, wv, bv);
  }

  std::vector<Var> forward_batch(Tape& t, const std::vector<Var>& xs) {
    Var wv = t.use(w);
    std::optional<Var> bv;
    if (has_bias) bv = t.use(b);
    std::vector<Var> out;
    out.reserve(xs.size());
    for (Var x : xs) out.push_back(ad::linear(x, wv, bv));
    return out;
  }

  /// Value-only application, for code paths that do not need gradients.
  Tensor apply(const Tensor& x) const {
    Tape t;
    Var xv = t.leaf(x);
    Var wv = t.leaf(w.value);
    std::optional<Var> bv;
    if (has_bias) bv = t.leaf(b.value);
    return ad::linear(xv, wv, bv).value();
  }
};

}  // namespace dolg
