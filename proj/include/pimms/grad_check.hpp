#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pimms/tape.hpp"

namespace pimms::ad {

struct GradCheckOptions {
  /// Base step; the probe for coordinate x uses step * max(1, |x|).
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so vanishing gradients are
  /// judged on absolute error instead.
  double scale_floor = 1e-4;
  /// Check at most this many coordinates per tensor (evenly strided); 0 = all.
  std::size_t max_coords_per_tensor = 0;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose probes changed a branch decision (relu sign, pool
  /// argmax, log clamp) and were therefore excluded.
  std::size_t skipped = 0;
  std::vector<GradCheckEntry> failures;

  bool passed() const { return failures.empty(); }
};

/// Scalar-valued function of `inputs` recorded on the given tape. Parameters
/// held outside (see grad_check's `params`) must be bound with Tape::param.
using Objective = std::function<Var(Tape&, std::span<const Var> inputs)>;

/// Central-difference check of d objective / d inputs and d objective / d params.
/// `params` are perturbed in place and restored; they must have requires_grad().
GradCheckReport grad_check(const Objective& objective, std::vector<Tensor> inputs, std::span<Tensor* const> params = {},
                           const GradCheckOptions& options = {});

}  // namespace pimms::ad
