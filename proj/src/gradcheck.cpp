#include "hfta/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "hfta/autograd.h"

namespace hfta {

GradCheckResult gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                               std::vector<Tensor> inputs, double h, double floor) {
  for (Tensor& t : inputs) t.zero_grad();
  {
    GradTape tape;
    tape.backward(fn(inputs));
  }
  GradCheckResult result;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    const Tensor analytic = t.grad();
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = fn(inputs).item();
      data[i] = saved - h;
      const double down = fn(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(
          result.max_rel_error, abs_err / std::max({std::abs(a), std::abs(numeric), floor}));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace hfta
