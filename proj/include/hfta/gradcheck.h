#pragma once

#include <functional>
#include <vector>

#include "hfta/tensor.h"

namespace hfta {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// Central differences of a scalar function against the tape gradient of
// every input with requires_grad. Relative error uses
// max(|analytic|, |numeric|, floor) as denominator.
GradCheckResult gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                               std::vector<Tensor> inputs, double h = 1e-6, double floor = 1e-2);

}  // namespace hfta
