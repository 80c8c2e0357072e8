#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "scoresync/tensor.hpp"

namespace scoresync {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates to sample across all tensors; 0 checks every coordinate.
  std::size_t samples = 0;
  std::uint64_t seed = 7;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences. The error for one coordinate is
/// |analytic - numeric| / max(1, |analytic|). `f` must be deterministic.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace scoresync
