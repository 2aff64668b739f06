#pragma once

#include "mars/tensor.hpp"

#include <functional>

namespace mars {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// f must be deterministic and produce a scalar; x must require grad.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double epsilon);

// Same check swept over a set of parameter tensors against a closure loss.
// One analytic backward, then central differences coordinate by coordinate.
double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor>& params,
                         double epsilon);

} // namespace mars
