#pragma once

// Central-difference gradient checking in 64-bit mode. The error metric for
// a parameter tensor is max_i |analytic_i - numeric_i| / max(1e-12, max_i |analytic_i|, max_i |numeric_i|),
// and the report keeps the worst tensor.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cthgr/autodiff.hpp"

namespace cthgr {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

// f must build a fresh graph from the given leaves on every call and return a
// scalar. Leaves are perturbed in place and restored.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  const std::vector<Tensor<double>*>& leaves, double tolerance,
                                  double step = 1e-5) {
  for (auto* t : leaves) t->zero_grad();
  Tensor<double> loss = f();
  require(loss.size() == 1, "grad_check: f must be scalar-valued");
  if (loss.requires_grad()) backward(loss);  // a constant f has an all-zero gradient

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto* t : leaves)
    analytic.push_back(t->has_grad() ? t->grad() : std::vector<double>(t->size(), 0.0));

  GradCheckReport report;
  for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
    auto& vals = leaves[ti]->value_mut();
    std::vector<double> numeric(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      const double h = step * std::max(1.0, std::abs(orig));
      vals[i] = orig + h;
      const double fp = f().item();
      vals[i] = orig - h;
      const double fm = f().item();
      vals[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    double scale = 1e-12;
    for (std::size_t i = 0; i < vals.size(); ++i)
      scale = std::max({scale, std::abs(analytic[ti][i]), std::abs(numeric[i])});
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double err = std::abs(analytic[ti][i] - numeric[i]) / scale;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = ti;
        report.worst_index = i;
      }
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace cthgr
