// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dolg/error.hpp"
#include "dolg/tensor.hpp"

namespace dolg::ad {

struct Node {
  Tensor value;
  Tensor grad;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;
};

/// A trainable (or stored) named tensor. Gradients accumulate across tapes
/// until zero_grad(); the optimizer consumes `grad` and mutates `value`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void set_value(Tensor v) {
    value = std::move(v);
    grad = Tensor(value.shape());
  }
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Node* n, Tape* t) : node_(n), tape_(t) {}
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Node* node() const { return node_; }
  Tape* tape() const { return tape_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  Node* node_ = nullptr;
  Tape* tape_ = nullptr;
};

/// Define-by-run tape. Node creation order is a topological order, so the
/// backward pass is a single reverse sweep. One tape per forward pass; tapes
/// over shared read-only parameters may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const Tensor& v) { return Var(make(v), this); }
  Var leaf(Tensor&& v) { return Var(make(std::move(v)), this); }

  /// Leaf bound to a parameter; after backward() the leaf grad is added to
  /// the parameter's accumulated grad.
  Var use(Parameter& p) {
    Var v = leaf(p.value);
    links_.emplace_back(v.node(), &p);
    return v;
  }

  Node* make(Tensor value) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.grad = Tensor(n.value.shape());
    return &n;
  }

  void backward(Var loss, double seed = 1.0) {
    if (loss.node()->value.numel() != 1)
      throw shape_error("backward: loss must be scalar, got " + loss.node()->value.shape_str());
    loss.node()->grad[0] += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backward) it->backward(*it);
    for (auto& [node, param] : links_) {
      if (!param->trainable) continue;
      for (std::size_t i = 0; i < node->grad.numel(); ++i) param->grad[i] += node->grad[i];
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;  // stable addresses
  std::vector<std::pair<Node*, Parameter*>> links_;
};

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

inline Var relu(Var x) {
  Tensor y(x.value().shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  Node* xn = x.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn](const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
  };
  return Var(n, x.tape());
}

inline double softplus_value(double v) {
  // stable: max(v,0) + log1p(exp(-|v|));  softplus(0) == ln 2 exactly
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

inline Var softplus(Var x) {
  Tensor y(x.value().shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = softplus_value(x.value()[i]);
  Node* xn = x.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn](const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xn->value[i]));
      xn->grad[i] += self.grad[i] * s;
    }
  };
  return Var(n, x.tape());
}

inline Var scale(Var x, double k) {
  Tensor y(x.value().shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = k * x.value()[i];
  Node* xn = x.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, k](const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) xn->grad[i] += k * self.grad[i];
  };
  return Var(n, x.tape());
}

inline Var hadamard(Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    throw shape_error("hadamard: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
  Tensor y(a.value().shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  Node* n = a.tape()->make(std::move(y));
  n->backward = [an, bn](const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      an->grad[i] += self.grad[i] * bn->value[i];
      bn->grad[i] += self.grad[i] * an->value[i];
    }
  };
  return Var(n, a.tape());
}

// ---------------------------------------------------------------------------
// convolution (rank-3 input, SAME padding with ceil-mode output sizes)
// ---------------------------------------------------------------------------

inline std::size_t conv_out_dim(std::size_t in, int stride) {
  return (in + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

inline int same_pad_begin(std::size_t in, std::size_t out, int stride, int k, int dilation) {
  const long eff = static_cast<long>(k - 1) * dilation + 1;
  long total = (static_cast<long>(out) - 1) * stride + eff - static_cast<long>(in);
  if (total < 0) total = 0;
  return static_cast<int>(total / 2);
}

/// 2-D convolution, square kernel, SAME padding, output dims = ceil(in/stride).
/// x: (Cin,H,W)  w: (Cout,Cin,k,k)  b: (Cout) optional.
inline Var conv2d(Var x, Var w, std::optional<Var> b, int stride = 1, int dilation = 1) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3) throw shape_error("conv2d: input must be rank-3, got " + xv.shape_str());
  if (wv.rank() != 4) throw shape_error("conv2d: weight must be rank-4, got " + wv.shape_str());
  if (wv.dim(1) != xv.dim(0))
    throw shape_error("conv2d: weight in-channels " + std::to_string(wv.dim(1)) +
                      " vs input channels " + std::to_string(xv.dim(0)));
  if (wv.dim(2) != wv.dim(3)) throw shape_error("conv2d: kernel must be square");
  if (b && b->value().numel() != wv.dim(0)) throw shape_error("conv2d: bias size mismatch");
  if (stride < 1 || dilation < 1) throw config_error("conv2d: stride and dilation must be >= 1");

  const std::size_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::size_t cout = wv.dim(0);
  const int k = static_cast<int>(wv.dim(2));
  const std::size_t oh = conv_out_dim(h, stride), ow = conv_out_dim(wd, stride);
  const int pt = same_pad_begin(h, oh, stride, k, dilation);
  const int pl = same_pad_begin(wd, ow, stride, k, dilation);

  Tensor y({cout, oh, ow});
  for (std::size_t oc = 0; oc < cout; ++oc) {
    const double bias = b ? b->value()[oc] : 0.0;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = bias;
        for (int ky = 0; ky < k; ++ky) {
          const long iy = static_cast<long>(oy) * stride - pt + static_cast<long>(ky) * dilation;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (int kx = 0; kx < k; ++kx) {
            const long ix = static_cast<long>(ox) * stride - pl + static_cast<long>(kx) * dilation;
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            for (std::size_t ic = 0; ic < cin; ++ic)
              acc += xv.at3(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                     wv.at4(oc, ic, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx));
          }
        }
        y.at3(oc, oy, ox) = acc;
      }
    }
  }

  Node* xn = x.node();
  Node* wn = w.node();
  Node* bn = b ? b->node() : nullptr;
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, wn, bn, stride, dilation, k, pt, pl](const Node& self) {
    const Tensor& xv2 = xn->value;
    const Tensor& wv2 = wn->value;
    const std::size_t cin = xv2.dim(0), h = xv2.dim(1), wd = xv2.dim(2);
    const std::size_t cout = self.value.dim(0), oh = self.value.dim(1), ow = self.value.dim(2);
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double g = self.grad.at3(oc, oy, ox);
          if (g == 0.0) continue;
          if (bn) bn->grad[oc] += g;
          for (int ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(oy) * stride - pt + static_cast<long>(ky) * dilation;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (int kx = 0; kx < k; ++kx) {
              const long ix = static_cast<long>(ox) * stride - pl + static_cast<long>(kx) * dilation;
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              for (std::size_t ic = 0; ic < cin; ++ic) {
                const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
                xn->grad.at3(ic, uy, ux) += g * wv2.at4(oc, ic, ky, kx);
                wn->grad.at4(oc, ic, ky, kx) += g * xv2.at3(ic, uy, ux);
              }
            }
          }
        }
      }
    }
  };
  return Var(n, x.tape());
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Stacks same-shaped rank-3 tensors into one rank-4 (N,...) node.
inline Var stack(const std::vector<Var>& xs) {
  if (xs.empty()) throw shape_error("stack: empty input list");
  const Tensor& first = xs.front().value();
  for (const Var& v : xs)
    if (!v.value().same_shape(first)) throw shape_error("stack: shape mismatch");
  std::vector<std::size_t> shape;
  shape.push_back(xs.size());
  for (std::size_t d : first.shape()) shape.push_back(d);
  Tensor y(shape);
  const std::size_t inner = first.numel();
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t k = 0; k < inner; ++k) y[i * inner + k] = xs[i].value()[k];
  std::vector<Node*> parents;
  for (const Var& v : xs) parents.push_back(v.node());
  Node* n = xs.front().tape()->make(std::move(y));
  n->backward = [parents, inner](const Node& self) {
    for (std::size_t i = 0; i < parents.size(); ++i)
      for (std::size_t k = 0; k < inner; ++k) parents[i]->grad[k] += self.grad[i * inner + k];
  };
  return Var(n, xs.front().tape());
}

/// Splits a rank-4 (N,...) node back into N rank-3 views.
inline std::vector<Var> unstack(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw shape_error("unstack: input must have a leading batch axis");
  const std::size_t n = xv.dim(0);
  std::vector<std::size_t> inner_shape(xv.shape().begin() + 1, xv.shape().end());
  std::size_t inner = 1;
  for (std::size_t d : inner_shape) inner *= d;
  std::vector<Var> out;
  out.reserve(n);
  Node* xn = x.node();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor slice(inner_shape);
    for (std::size_t k = 0; k < inner; ++k) slice[k] = xv[i * inner + k];
    Node* node = x.tape()->make(std::move(slice));
    node->backward = [xn, i, inner](const Node& self) {
      for (std::size_t k = 0; k < inner; ++k) xn->grad[i * inner + k] += self.grad[k];
    };
    out.emplace_back(node, x.tape());
  }
  return out;
}

/// Batch normalization over a (N,C,H,W) stack: per-channel statistics across
/// the batch and spatial axes. Optionally reports the batch statistics so the
/// caller can maintain running averages.
inline Var batchnorm_nchw(Var x, Var gamma, Var beta, double eps = 1e-5,
                          Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw shape_error("batchnorm: input must be rank-4 (N,C,H,W)");
  const std::size_t nb = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw shape_error("batchnorm: gamma/beta size mismatch");
  const std::size_t count = nb * hw;

  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);
  Tensor y(xv.shape());
  std::vector<double> var(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m = 0.0;
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t i = 0; i < hw; ++i) m += xv[(n * c + ch) * hw + i];
    m /= static_cast<double>(count);
    double v = 0.0;
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = xv[(n * c + ch) * hw + i] - m;
        v += d * d;
      }
    v /= static_cast<double>(count);
    mu[ch] = m;
    var[ch] = v;
    inv_std[ch] = 1.0 / std::sqrt(v + eps);
    const double g = gamma.value()[ch], bb = beta.value()[ch];
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (n * c + ch) * hw + i;
        y[k] = g * (xv[k] - m) * inv_std[ch] + bb;
      }
  }
  if (batch_mean) *batch_mean = Tensor({c}, std::vector<double>(mu.begin(), mu.end()));
  if (batch_var) *batch_var = Tensor({c}, var);

  Node* xn = x.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, gn, bn, mu, inv_std, nb, hw](const Node& self) {
    const std::size_t c = xn->value.dim(1);
    const double total = static_cast<double>(nb * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t k = (b * c + ch) * hw + i;
          const double go = self.grad[k];
          const double xh = (xn->value[k] - mu[ch]) * inv_std[ch];
          sum_g += go;
          sum_gx += go * xh;
        }
      gn->grad[ch] += sum_gx;
      bn->grad[ch] += sum_g;
      const double gsc = gn->value[ch] * inv_std[ch];
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t k = (b * c + ch) * hw + i;
          const double go = self.grad[k];
          const double xh = (xn->value[k] - mu[ch]) * inv_std[ch];
          xn->grad[k] += gsc * (go - sum_g / total - xh * sum_gx / total);
        }
    }
  };
  return Var(n, x.tape());
}

/// Mean of scalar nodes; the batch-loss reduction.
inline Var mean_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw shape_error("mean_scalars: empty input list");
  double s = 0.0;
  std::vector<Node*> parents;
  for (const Var& v : xs) {
    if (v.value().numel() != 1) throw shape_error("mean_scalars: inputs must be scalar");
    s += v.value()[0];
    parents.push_back(v.node());
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  Node* n = xs.front().tape()->make(Tensor::scalar(s * inv));
  n->backward = [parents, inv](const Node& self) {
    for (Node* p : parents) p->grad[0] += self.grad[0] * inv;
  };
  return Var(n, xs.front().tape());
}

/// Batch norm against fixed (stored) statistics; used when the stats are frozen.
inline Var batchnorm_frozen(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                            double eps = 1e-5) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw shape_error("batchnorm: input must be rank-3");
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  if (mean.numel() != c || var.numel() != c) throw shape_error("batchnorm: stats size mismatch");

  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);

  Tensor y(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i)
      y[ch * hw + i] = gamma.value()[ch] * (xv[ch * hw + i] - mean[ch]) * inv_std[ch] + beta.value()[ch];

  Node* xn = x.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  std::vector<double> mu(mean.data(), mean.data() + c);
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, gn, bn, mu, inv_std, hw](const Node& self) {
    const std::size_t c = xn->value.dim(0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gsc = gn->value[ch] * inv_std[ch];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double go = self.grad[ch * hw + i];
        sum_g += go;
        sum_gx += go * (xn->value[ch * hw + i] - mu[ch]) * inv_std[ch];
        xn->grad[ch * hw + i] += gsc * go;
      }
      gn->grad[ch] += sum_gx;
      bn->grad[ch] += sum_g;
    }
  };
  return Var(n, x.tape());
}

/// L2-normalize each spatial position's channel vector: y = x / (|x| + eps).
inline Var l2norm_positions(Var x, double eps = 1e-6) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw shape_error("l2norm_positions: input must be rank-3");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), hw = h * w;

  Tensor y(xv.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double sq = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = xv[ch * hw + p];
      sq += v * v;
    }
    const double a = std::sqrt(sq) + eps;
    for (std::size_t ch = 0; ch < c; ++ch) y[ch * hw + p] = xv[ch * hw + p] / a;
  }

  Node* xn = x.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, eps, c, hw](const Node& self) {
    for (std::size_t p = 0; p < hw; ++p) {
      double sq = 0.0, xu = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = xn->value[ch * hw + p];
        sq += v * v;
        xu += v * self.grad[ch * hw + p];
      }
      const double nn = std::sqrt(sq);
      const double a = nn + eps;
      if (nn < 1e-300) {
        for (std::size_t ch = 0; ch < c; ++ch) xn->grad[ch * hw + p] += self.grad[ch * hw + p] / eps;
        continue;
      }
      const double coef = xu / (nn * a * a);
      for (std::size_t ch = 0; ch < c; ++ch)
        xn->grad[ch * hw + p] += self.grad[ch * hw + p] / a - xn->value[ch * hw + p] * coef;
    }
  };
  return Var(n, x.tape());
}

// ---------------------------------------------------------------------------
// pooling / broadcast / concat
// ---------------------------------------------------------------------------

/// Mean over the spatial extent per channel: (C,H,W) -> (C).
inline Var spatial_mean(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw shape_error("spatial_mean: input must be rank-3");
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  if (hw == 0) throw invalid_input_error("spatial_mean: empty spatial extent");
  Tensor y({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    y[ch] = s / static_cast<double>(hw);
  }
  Node* xn = x.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, c, hw](const Node& self) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = self.grad[ch] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) xn->grad[ch * hw + i] += g;
    }
  };
  return Var(n, x.tape());
}

/// Generalized-mean pooling: y_c = (mean_ij max(x,eps)^p)^(1/p); (C,H,W) -> (C).
/// Entries at or below the clamp floor get zero gradient.
inline Var gem_pool_op(Var x, double p, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw shape_error("gem_pool: input must be rank-3");
  if (!(p > 0.0)) throw config_error("gem_pool: exponent p must be > 0");
  if (!(eps > 0.0)) throw config_error("gem_pool: epsilon must be > 0");
  if (!xv.all_finite()) throw invalid_input_error("gem_pool: non-finite input");
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  if (hw == 0) throw invalid_input_error("gem_pool: empty spatial extent");

  Tensor y({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += std::pow(std::max(xv[ch * hw + i], eps), p);
    y[ch] = std::pow(s / static_cast<double>(hw), 1.0 / p);
  }

  Node* xn = x.node();
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, p, eps, c, hw](const Node& self) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double yc = self.value[ch];
      const double factor = self.grad[ch] * std::pow(yc, 1.0 - p) / static_cast<double>(hw);
      if (factor == 0.0) continue;
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = xn->value[ch * hw + i];
        if (v > eps) xn->grad[ch * hw + i] += factor * std::pow(v, p - 1.0);
      }
    }
  };
  return Var(n, x.tape());
}

/// Broadcast a channel vector to a (C,H,W) map.
inline Var broadcast_map(Var v, std::size_t h, std::size_t w) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1) throw shape_error("broadcast_map: input must be rank-1");
  const std::size_t c = vv.numel(), hw = h * w;
  Tensor y({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) y[ch * hw + i] = vv[ch];
  Node* vn = v.node();
  Node* n = v.tape()->make(std::move(y));
  n->backward = [vn, c, hw](const Node& self) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += self.grad[ch * hw + i];
      vn->grad[ch] += s;
    }
  };
  return Var(n, v.tape());
}

/// Modulate features by a single-channel attention map: (C,H,W) * (1,H,W).
inline Var mul_attention(Var f, Var a) {
  const Tensor& fv = f.value();
  const Tensor& av = a.value();
  if (fv.rank() != 3 || av.rank() != 3 || av.dim(0) != 1 || av.dim(1) != fv.dim(1) ||
      av.dim(2) != fv.dim(2))
    throw shape_error("mul_attention: expected (C,H,W) and (1,H,W), got " + fv.shape_str() +
                      " and " + av.shape_str());
  const std::size_t c = fv.dim(0), hw = fv.dim(1) * fv.dim(2);
  Tensor y(fv.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) y[ch * hw + i] = fv[ch * hw + i] * av[i];
  Node* fn = f.node();
  Node* an = a.node();
  Node* n = f.tape()->make(std::move(y));
  n->backward = [fn, an, c, hw](const Node& self) {
    for (std::size_t i = 0; i < hw; ++i) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        fn->grad[ch * hw + i] += self.grad[ch * hw + i] * an->value[i];
        s += self.grad[ch * hw + i] * fn->value[ch * hw + i];
      }
      an->grad[i] += s;
    }
  };
  return Var(n, f.tape());
}

/// Concatenate along the first axis; trailing dims must agree.
inline Var concat0(const std::vector<Var>& xs) {
  if (xs.empty()) throw shape_error("concat0: empty input list");
  const Tensor& first = xs.front().value();
  std::size_t inner = 1;
  for (std::size_t i = 1; i < first.rank(); ++i) inner *= first.dim(i);
  std::size_t total0 = 0;
  for (const Var& v : xs) {
    const Tensor& t = v.value();
    if (t.rank() != first.rank()) throw shape_error("concat0: rank mismatch");
    std::size_t in2 = 1;
    for (std::size_t i = 1; i < t.rank(); ++i) {
      if (t.dim(i) != first.dim(i)) throw shape_error("concat0: trailing dim mismatch");
      in2 *= t.dim(i);
    }
    (void)in2;
    total0 += t.dim(0);
  }
  std::vector<std::size_t> shape = first.shape();
  shape[0] = total0;
  Tensor y(shape);
  std::size_t off = 0;
  for (const Var& v : xs) {
    const Tensor& t = v.value();
    for (std::size_t i = 0; i < t.numel(); ++i) y[off + i] = t[i];
    off += t.numel();
  }
  std::vector<Node*> parents;
  parents.reserve(xs.size());
  for (const Var& v : xs) parents.push_back(v.node());
  Node* n = xs.front().tape()->make(std::move(y));
  n->backward = [parents](const Node& self) {
    std::size_t off = 0;
    for (Node* p : parents) {
      for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += self.grad[off + i];
      off += p->grad.numel();
    }
  };
  return Var(n, xs.front().tape());
}

// ---------------------------------------------------------------------------
// dense layers
// ---------------------------------------------------------------------------

/// y = W x + b with x: (D), W: (O,D), b: (O) optional.
inline Var linear(Var x, Var w, std::optional<Var> b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(1) != xv.numel())
    throw shape_error("linear: shape mismatch " + wv.shape_str() + " x " + xv.shape_str());
  if (b && b->value().numel() != wv.dim(0)) throw shape_error("linear: bias size mismatch");
  const std::size_t o = wv.dim(0), d = wv.dim(1);
  Tensor y({o});
  for (std::size_t r = 0; r < o; ++r) {
    double acc = b ? b->value()[r] : 0.0;
    for (std::size_t cidx = 0; cidx < d; ++cidx) acc += wv.at2(r, cidx) * xv[cidx];
    y[r] = acc;
  }
  Node* xn = x.node();
  Node* wn = w.node();
  Node* bn = b ? b->node() : nullptr;
  Node* n = x.tape()->make(std::move(y));
  n->backward = [xn, wn, bn, o, d](const Node& self) {
    for (std::size_t r = 0; r < o; ++r) {
      const double g = self.grad[r];
      if (g == 0.0) continue;
      if (bn) bn->grad[r] += g;
      for (std::size_t cidx = 0; cidx < d; ++cidx) {
        xn->grad[cidx] += g * wn->value.at2(r, cidx);
        wn->grad.at2(r, cidx) += g * xn->value[cidx];
      }
    }
  };
  return Var(n, x.tape());
}

// ---------------------------------------------------------------------------
// orthogonal decomposition
// ---------------------------------------------------------------------------

/// Remove from every spatial position of f its projection onto g:
/// y[:,i,j] = f[:,i,j] - (f[:,i,j].g / (|g|^2 + stabilizer)) g.
inline Var orthogonalize_map(Var f, Var g, double stabilizer = 1e-12) {
  const Tensor& fv = f.value();
  const Tensor& gv = g.value();
  if (fv.rank() != 3 || gv.rank() != 1 || gv.numel() != fv.dim(0))
    throw shape_error("orthogonalize: expected (C,H,W) and (C), got " + fv.shape_str() + " and " +
                      gv.shape_str());
  const std::size_t c = fv.dim(0), hw = fv.dim(1) * fv.dim(2);
  const double q = squared_norm(gv) + stabilizer;

  Tensor y(fv.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) s += fv[ch * hw + p] * gv[ch];
    const double coef = s / q;
    for (std::size_t ch = 0; ch < c; ++ch) y[ch * hw + p] = fv[ch * hw + p] - coef * gv[ch];
  }

  Node* fn = f.node();
  Node* gn = g.node();
  Node* n = f.tape()->make(std::move(y));
  n->backward = [fn, gn, q, c, hw](const Node& self) {
    for (std::size_t p = 0; p < hw; ++p) {
      double s = 0.0, ug = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        s += fn->value[ch * hw + p] * gn->value[ch];
        ug += self.grad[ch * hw + p] * gn->value[ch];
      }
      const double cf = ug / q;
      const double cg = 2.0 * s * ug / (q * q);
      const double cu = s / q;
      for (std::size_t ch = 0; ch < c; ++ch) {
        fn->grad[ch * hw + p] += self.grad[ch * hw + p] - cf * gn->value[ch];
        gn->grad[ch] += -cf * fn->value[ch * hw + p] + cg * gn->value[ch] - cu * self.grad[ch * hw + p];
      }
    }
  };
  return Var(n, f.tape());
}

// ---------------------------------------------------------------------------
// classification head pieces
// ---------------------------------------------------------------------------

/// Cosine similarity of f against every row of W; rows and f are normalized
/// inside the op so the stored parameters need not be unit vectors.
inline Var cosine_logits(Var w, Var f) {
  const Tensor& wv = w.value();
  const Tensor& fv = f.value();
  if (wv.rank() != 2 || fv.rank() != 1 || wv.dim(1) != fv.numel())
    throw shape_error("cosine_logits: shape mismatch " + wv.shape_str() + " vs " + fv.shape_str());
  const std::size_t nrows = wv.dim(0), d = wv.dim(1);
  const double fnorm = norm(fv);
  if (fnorm < 1e-30) throw degenerate_global_error("cosine_logits: zero descriptor");
  std::vector<double> wnorm(nrows);
  Tensor y({nrows});
  for (std::size_t r = 0; r < nrows; ++r) {
    double sq = 0.0, dp = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      sq += wv.at2(r, i) * wv.at2(r, i);
      dp += wv.at2(r, i) * fv[i];
    }
    wnorm[r] = std::sqrt(sq);
    if (wnorm[r] < 1e-30) throw degenerate_global_error("cosine_logits: zero head row");
    y[r] = dp / (wnorm[r] * fnorm);
  }
  Node* wn = w.node();
  Node* fn = f.node();
  Node* n = w.tape()->make(std::move(y));
  n->backward = [wn, fn, wnorm, fnorm, nrows, d](const Node& self) {
    for (std::size_t r = 0; r < nrows; ++r) {
      const double u = self.grad[r];
      if (u == 0.0) continue;
      const double s = self.value[r];
      const double iwf = 1.0 / (wnorm[r] * fnorm);
      const double iw2 = 1.0 / (wnorm[r] * wnorm[r]);
      const double if2 = 1.0 / (fnorm * fnorm);
      for (std::size_t i = 0; i < d; ++i) {
        fn->grad[i] += u * (wn->value.at2(r, i) * iwf - s * fn->value[i] * if2);
        wn->grad.at2(r, i) += u * (fn->value[i] * iwf - s * wn->value.at2(r, i) * iw2);
      }
    }
  };
  return Var(n, w.tape());
}

/// ArcFace margin on the target logit: y_t = cos(min(acos(s_t) + m, pi)).
/// Forward clamps s_t to [-1, 1]; the derivative uses a 1e-7 guard so it
/// stays finite at the interval ends.
inline Var adjust_target(Var s, std::size_t target, double m) {
  const Tensor& sv = s.value();
  if (sv.rank() != 1) throw shape_error("adjust_target: input must be rank-1");
  if (target >= sv.numel())
    throw index_error("adjust_target: label " + std::to_string(target) + " out of range [0," +
                      std::to_string(sv.numel()) + ")");
  Tensor y = sv;
  if (m != 0.0) {
    const double sc = std::clamp(sv[target], -1.0, 1.0);
    const double ang = std::min(std::acos(sc) + m, 3.14159265358979323846);
    y[target] = std::cos(ang);
  }
  Node* sn = s.node();
  Node* n = s.tape()->make(std::move(y));
  n->backward = [sn, target, m](const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      if (i != target || m == 0.0) {
        sn->grad[i] += self.grad[i];
        continue;
      }
      const double sc = std::clamp(sn->value[target], -1.0 + 1e-7, 1.0 - 1e-7);
      const double theta = std::acos(sc);
      double deriv = 0.0;
      if (theta + m < 3.14159265358979323846)
        deriv = std::sin(theta + m) / std::sqrt(1.0 - sc * sc);
      sn->grad[i] += self.grad[i] * deriv;
    }
  };
  return Var(n, s.tape());
}

/// Cross entropy on raw logits: loss = logsumexp(z) - z[target]. Scalar output.
inline Var nll_softmax(Var z, std::size_t target) {
  const Tensor& zv = z.value();
  if (zv.rank() != 1) throw shape_error("nll_softmax: input must be rank-1");
  if (target >= zv.numel()) throw index_error("nll_softmax: target out of range");
  double mx = zv[0];
  for (std::size_t i = 1; i < zv.numel(); ++i) mx = std::max(mx, zv[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < zv.numel(); ++i) sum += std::exp(zv[i] - mx);
  const double lse = mx + std::log(sum);
  Node* zn = z.node();
  Node* n = z.tape()->make(Tensor::scalar(lse - zv[target]));
  n->backward = [zn, target, lse](const Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < zn->value.numel(); ++i) {
      const double p = std::exp(zn->value[i] - lse);
      zn->grad[i] += g * (p - (i == target ? 1.0 : 0.0));
    }
  };
  return Var(n, z.tape());
}

/// Scalar objective sum_i weights[i] * x[i]; used by tests to reduce a tensor
/// output to one number for gradient checking.
inline Var weighted_sum(Var x, const Tensor& weights) {
  if (x.value().numel() != weights.numel()) throw shape_error("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) s += x.value()[i] * weights[i];
  Node* xn = x.node();
  Tensor wcopy = weights;
  Node* n = x.tape()->make(Tensor::scalar(s));
  n->backward = [xn, wcopy](const Node& self) {
    for (std::size_t i = 0; i < wcopy.numel(); ++i) xn->grad[i] += self.grad[0] * wcopy[i];
  };
  return Var(n, x.tape());
}

}  // namespace dolg::ad
