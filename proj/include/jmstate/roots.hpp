#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>

#include "jmstate/domain.hpp"

namespace jmstate {

struct RootResult {
  double root = 0.0;
  double value = 0.0;
  int iterations = 0;
};

/// Brent's bracketing root finder (inverse quadratic interpolation with
/// bisection safeguard). Stops when the bracket is narrower than `tol` or
/// the function value is exactly zero.
RootResult brent_root(const std::function<double(double)>& f, double lo, double hi,
                      double tol = 1e-8, int max_iter = 200);

}  // namespace jmstate
