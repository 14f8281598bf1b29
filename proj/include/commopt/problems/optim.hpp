#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "commopt/linalg.hpp"

namespace commopt {

// Smooth objective: returns f(x) and writes grad f(x) into g.
using SmoothFn = std::function<double(std::span<const double> x, std::span<double> g)>;

struct MinimizeResult {
  Vec x;
  double value = 0;
  double grad_norm = 0;
  // Objective/gradient evaluations performed (each one oracle pass).
  std::size_t evaluations = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct MinimizeOptions {
  double tol = 1e-10;         // stop when ||grad|| <= tol
  std::size_t max_evals = 100000;
  // Line-search iterations (CG and L-BFGS only).
  std::size_t max_iter = static_cast<std::size_t>(-1);
  double initial_step = 1.0;  // first trial step for backtracking
  // Backtracking never goes below this step (use 1/L when L is known, so
  // rounding noise near the optimum cannot stall the search).
  double min_step = 0.0;
};

// Gradient descent with Armijo backtracking. The accepted step is doubled
// as the next trial step.
MinimizeResult gradient_descent_armijo(const SmoothFn& f, Vec x0, const MinimizeOptions& opts);

// Gradient descent with a fixed step; one evaluation per iteration.
MinimizeResult gradient_descent_fixed(const SmoothFn& f, Vec x0, double step,
                                      const MinimizeOptions& opts);

// Nonlinear conjugate gradient (Polak-Ribiere+, restart on non-descent) with
// Armijo backtracking.
MinimizeResult nonlinear_cg(const SmoothFn& f, Vec x0, const MinimizeOptions& opts);

// L-BFGS with a strong Wolfe line search (bracketing + bisection zoom).
MinimizeResult lbfgs(const SmoothFn& f, Vec x0, const MinimizeOptions& opts,
                     std::size_t memory = 10);

}  // namespace commopt
