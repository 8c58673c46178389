// Central-difference gradient checking for scalar-valued graphs.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "moco/autograd.hpp"

namespace moco::testing {

struct GradReport {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t worst_index = 0;
};

/// Compares d f / d x from backward() against central differences on every
/// element of x (or `max_elems` evenly strided ones). Relative error uses
/// max(|a|, |n|, floor) as the denominator.
inline GradReport gradcheck(Var& x, const std::function<Var()>& f, double step = 1e-5, double floor = 1e-6,
                            std::size_t max_elems = 0) {
  x.zero_grad();
  Var y = f();
  backward(y);
  const Tensor analytic = x.grad();
  GradReport report;
  const std::size_t n = x.size();
  const std::size_t stride = (max_elems == 0 || n <= max_elems) ? 1 : n / max_elems;
  for (std::size_t i = 0; i < n; i += stride) {
    const double saved = x.mutable_value()[i];
    double fp = 0.0;
    double fm = 0.0;
    {
      NoGradGuard guard;
      x.mutable_value()[i] = saved + step;
      fp = f().item();
      x.mutable_value()[i] = saved - step;
      fm = f().item();
    }
    x.mutable_value()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(a));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace moco::testing
