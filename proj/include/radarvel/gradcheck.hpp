#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "radarvel/model.hpp"

namespace radarvel {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-6;       // central difference half-width
  double tolerance = 1e-4;  // max relative error
  // Denominators are floored at max(abs_floor, scale_floor * max|analytic|):
  // entries far below the gradient's scale are compared against that scale,
  // where finite-difference roundoff would otherwise dominate.
  double abs_floor = 1e-9;
  double scale_floor = 1e-3;
};

/// Central finite-difference check of an analytic gradient. `f` evaluates
/// the loss at a parameter vector.
template <typename F>
GradCheckResult check_gradient(const std::string& name, std::vector<double> x,
                               const std::vector<double>& analytic, F&& f, const GradCheckOptions& opt) {
  GradCheckResult r;
  r.name = name;
  double scale = 0.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  const double floor = std::max(opt.abs_floor, opt.scale_floor * scale);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + opt.step;
    const double fp = f(x);
    x[i] = x0 - opt.step;
    const double fm = f(x);
    x[i] = x0;
    const double numeric = (fp - fm) / (2.0 * opt.step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    const double rel = std::abs(numeric - analytic[i]) / denom;
    r.max_rel_error = std::max(r.max_rel_error, rel);
    ++r.checked;
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

/// Double-precision checks of every tape op, the full detector, both
/// detection losses, the velocity regression and the velocity step.
std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, const GradCheckOptions& opt = {});

/// Tiny detector used by the checks.
ModelConfig gradcheck_model();

}  // namespace radarvel
