// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dolg/autodiff.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

/// ArcFace-adjusted cosine similarity:
///   AF(s, c) = cos(acos(s) + m)  if c = 1
///            = s                 if c = 0
/// s is clamped to [-1, 1] before acos and the adjusted angle saturates at pi,
/// so the margin can only reduce the true-class similarity.
inline double arcface_adjust(double s, int groundtruth, double margin) {
  if (groundtruth == 0 || margin == 0.0) return s;
  const double sc = std::clamp(s, -1.0, 1.0);
  const double ang = std::min(std::acos(sc) + margin, 3.14159265358979323846);
  return std::cos(ang);
}

/// L2-normalized N-class prediction head with additive angular margin.
struct ArcFaceHead {
  ad::Parameter weights;  // (N, dim); rows are normalized functionally at use
  double margin = 0.15;
  double scale = 30.0;
  std::size_t num_classes = 0;

  void init(Rng& rng, std::size_t n_classes, std::size_t dim) {
    validate_hparams();
    num_classes = n_classes;
    weights.set_value(rng.normal_tensor({n_classes, dim}, 0.01));
    weights.name = "head.weights";
  }

  void validate_hparams() const {
    // margins beyond pi/2 are unusual but valid thanks to the angle
    // saturation in arcface_adjust; some fusion variants train with m = 2.0
    if (!(margin >= 0.0) || !(margin < 3.14159265358979323846))
      throw config_error("arcface: margin must lie in [0, pi)");
    if (!(scale > 0.0)) throw config_error("arcface: scale must be > 0");
  }

  void collect(std::vector<ad::Parameter*>& out) { out.push_back(&weights); }

  /// Cross entropy over gamma-scaled, margin-adjusted cosine logits.
  ad::Var loss(ad::Tape& t, ad::Var descriptor, std::size_t label) {
    return loss_with(t.use(weights), descriptor, label);
  }

  /// Same, with a pre-created weight leaf so a batch shares one copy.
  ad::Var loss_with(ad::Var weight_leaf, ad::Var descriptor, std::size_t label) const {
    if (label >= num_classes)
      throw index_error("arcface: label " + std::to_string(label) + " out of range [0," +
                        std::to_string(num_classes) + ")");
    ad::Var s = ad::cosine_logits(weight_leaf, descriptor);
    ad::Var adj = ad::adjust_target(s, label, margin);
    return ad::nll_softmax(ad::scale(adj, scale), label);
  }

  /// Raw cosine similarities (no margin), for accuracy and retrieval checks.
  Tensor similarities(const Tensor& descriptor) const {
    ad::Tape t;
    ad::Var w = t.leaf(weights.value);
    ad::Var f = t.leaf(descriptor);
    return ad::cosine_logits(w, f).value();
  }

  std::size_t predict(const Tensor& descriptor) const {
    const Tensor s = similarities(descriptor);
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.numel(); ++i)
      if (s[i] > s[best]) best = i;
    return best;
  }
};

}  // namespace dolg
