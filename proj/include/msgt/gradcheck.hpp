#pragma once

#include <functional>

#include "msgt/parameter.hpp"
#include "msgt/tape.hpp"

namespace msgt {

/// Builds a scalar from x on a fresh tape.
using TensorToScalar = std::function<Var(Tape&, Var)>;
/// Builds a scalar on a fresh tape, binding parameters via Tape::param.
using ParamsToScalar = std::function<Var(Tape&)>;

/// max over coordinates of |analytic - central| / max(1, |central|).
double finite_diff_check(const TensorToScalar& f, const Tensor& x, double eps);

/// Same measure over every trainable parameter in the store. Parameter
/// values are restored afterwards; gradients are left zeroed.
double finite_diff_check(const ParamsToScalar& f, ParameterStore& params, double eps);

}  // namespace msgt
