// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dolg/autodiff.hpp"

namespace dolg {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;

  bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

/// Compares tape gradients against central finite differences for every
/// coordinate of every listed parameter. `build` must construct the scalar
/// objective on the given tape, reading the parameters via tape.use().
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradCheckReport check_gradients(const std::function<ad::Var(ad::Tape&)>& build,
                                       const std::vector<ad::Parameter*>& params,
                                       double h_rel = 1e-5, double denom_floor = 1e-4) {
  const auto eval = [&]() {
    ad::Tape t;
    return build(t).value()[0];
  };

  for (ad::Parameter* p : params) p->zero_grad();
  {
    ad::Tape t;
    ad::Var loss = build(t);
    t.backward(loss);
  }

  GradCheckReport report;
  for (ad::Parameter* p : params) {
    if (!p->trainable) continue;  // running statistics enter as constants
    for (std::size_t k = 0; k < p->value.numel(); ++k) {
      const double x0 = p->value[k];
      const double h = h_rel * std::max(1.0, std::abs(x0));
      p->value[k] = x0 + h;
      const double fp = eval();
      p->value[k] = x0 - h;
      const double fm = eval();
      p->value[k] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double analytic = p->grad[k];
      const double rel =
          std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), denom_floor});
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = p->name + "[" + std::to_string(k) + "] analytic=" + std::to_string(analytic) +
                       " fd=" + std::to_string(fd);
      }
    }
  }
  return report;
}

}  // namespace dolg
