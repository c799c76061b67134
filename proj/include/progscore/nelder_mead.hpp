#pragma once

#include <functional>

#include "progscore/common.hpp"

namespace progscore {

struct NelderMeadOptions {
  int max_evals = 200;
  double initial_step = 0.25;  // absolute step per coordinate for the first simplex
  double xtol = 1e-8;          // stop when the simplex diameter (inf-norm) drops below
  double ftol = 0.0;           // additionally stop when the f-spread drops below (if > 0)
};

struct NelderMeadResult {
  Vec x;
  double f = 0.0;
  int evals = 0;
};

/// Derivative-free simplex minimization (Nelder-Mead with standard
/// reflection/expansion/contraction/shrink coefficients). The objective
/// may return +infinity to mark infeasible points.
NelderMeadResult nelder_mead_minimize(const std::function<double(const Vec&)>& f, Vec x0,
                                      const NelderMeadOptions& opt = {});

}  // namespace progscore
