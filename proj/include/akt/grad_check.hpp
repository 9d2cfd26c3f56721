#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "akt/tensor.hpp"

namespace akt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  // Location of the worst entry.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares the reverse-mode gradient of a scalar function against central
/// differences (f(t+eps) - f(t-eps)) / 2eps, entry by entry, over every
/// parameter. Relative error is |a-b| / max(1, |a|, |b|).
///
/// `params` must be leaf tensors with requires_grad set; their grads are
/// cleared before and after the check. Throws NumericError if f evaluates
/// to a non-finite value and ConfigError for eps outside [1e-7, 1e-3].
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps = 1e-5);

}  // namespace akt
