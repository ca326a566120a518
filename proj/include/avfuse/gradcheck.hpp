#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <string>

#include "avfuse/matrix.hpp"

namespace avf {

// Finite-difference verification of an analytic gradient. Double precision by
// construction: the gradients this harness certifies are trusted down to
// ~1e-4 relative error, far below what float arithmetic could resolve.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  std::size_t checked_coords = 0;
  bool analytic_finite = true;
  std::string message;

  bool passed(double tol) const { return analytic_finite && max_rel_error <= tol; }
};

using ScalarFn = std::function<double(const MatrixD&)>;
using GradFn = std::function<MatrixD(const MatrixD&)>;

// Compares grad_fn(x0) against central differences of value_fn around x0.
// Relative error per coordinate: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// `coords` restricts the check to a subset of flat coordinates (empty = all).
inline GradCheckReport grad_check(const ScalarFn& value_fn, const GradFn& grad_fn,
                                  const MatrixD& x0, double step,
                                  std::span<const std::size_t> coords = {}) {
  if (!(step >= 1e-7 && step <= 1e-3))
    throw ConfigError("grad_check: step must lie in [1e-7, 1e-3]");

  const MatrixD analytic = grad_fn(x0);
  if (!analytic.same_shape(x0))
    throw DimensionError("grad_check: gradient shape " + analytic.shape_str() +
                         " != input shape " + x0.shape_str());

  GradCheckReport report;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic.data()[i])) {
      report.analytic_finite = false;
      report.worst_coord = i;
      report.message = "non-finite analytic gradient at coordinate " + std::to_string(i);
      return report;
    }
  }

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x0.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  MatrixD x = x0;
  for (std::size_t i : coords) {
    const double saved = x.data()[i];
    x.data()[i] = saved + step;
    const double f_plus = value_fn(x);
    x.data()[i] = saved - step;
    const double f_minus = value_fn(x);
    x.data()[i] = saved;

    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coord = i;
    }
    ++report.checked_coords;
  }
  return report;
}

}  // namespace avf
