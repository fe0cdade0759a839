#pragma once

#include <functional>

#include <Eigen/Dense>

#include "pydt/divergence.hpp"

namespace pydt {

/// Objective for maximization: returns the value and fills the gradient.
/// May return -inf for infeasible points; the line search backs off.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int memory = 8;
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
  double value_tolerance = 1e-10;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Limited-memory BFGS ascent with backtracking Armijo line search. The
/// returned value is never below the value at x0.
LbfgsResult maximize_lbfgs(const Objective& f, const Eigen::VectorXd& x0, const LbfgsOptions& options = {});

/// Golden-section search for the maximizer of a unimodal f on [lo, hi].
double golden_section_max(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-8);

/// One univariate slice-sampling update (stepping out without limit, then
/// shrinkage) of x under the log density `log_f`.
double slice_sample(const std::function<double(double)>& log_f, double x, double width, Rng& rng);

}  // namespace pydt
