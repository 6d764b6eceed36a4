#pragma once

#include <functional>

#include "align/tensor.hpp"

namespace align {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares reverse-mode gradients of `fn` at `x` with central differences.
/// Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
/// `step` must lie in (0, 1e-2]; non-finite evaluations throw.
double finite_difference_check(const ScalarFn& fn, const Tensor& x, double step = 1e-5);

}  // namespace align
