#pragma once

#include <cstdint>
#include <functional>

#include "enclab/tensor.hpp"

namespace enclab {

// Compares tape gradients of a scalar-valued function against central finite
// differences. Returns the max over checked coordinates of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
//
// When max_coords > 0 and the tensor is larger, a seeded subsample of
// coordinates is checked; otherwise every coordinate is.
double grad_check(const std::function<Tensor()>& f, Tensor& x, float step,
                  int64_t max_coords = -1, uint64_t seed = 1);

}  // namespace enclab
