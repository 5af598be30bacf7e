#pragma once

#include <functional>

#include "sos/tensor.hpp"

namespace sos {

// Compares the recorded gradient of scalar f at x against central
// differences with step h. Returns
//   max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|).
// x's values are restored on return; its grad is overwritten.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h);

}  // namespace sos
