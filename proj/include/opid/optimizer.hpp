#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "opid/controls.hpp"
#include "opid/linalg.hpp"
#include "opid/parallel.hpp"

namespace opid {

struct OptimizerConfig {
  int multistart = 5;
  int max_iters = 200;
  double grad_tol = 1e-8;
  double fd_step = 1e-6;
  std::uint64_t seed = 0;
  Execution exec = Execution::Parallel;

  void validate() const;
};

/// f(x) with the gradient written to `grad` when it is non-null.
using Objective = std::function<double(const Vec& x, Vec* grad)>;

struct MinimizeResult {
  Vec x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Projected BFGS on the box [lower, upper]. Variables at an active bound
/// are frozen for the step; the inverse Hessian is updated only when the
/// curvature s^T y is positive. With `analytic_gradient` false the gradient
/// is formed by central differences with step cfg.fd_step.
MinimizeResult minimize_box(const Objective& f, const Vec& lower, const Vec& upper,
                            const Vec& x0, const OptimizerConfig& cfg,
                            bool analytic_gradient = true);

/// Multistart wrapper: minimizes from every start and returns the lowest
/// value, ties going to the earliest start. `all` receives every run.
MinimizeResult minimize_multistart(const Objective& f, const Vec& lower,
                                   const Vec& upper, const std::vector<Vec>& starts,
                                   const OptimizerConfig& cfg,
                                   bool analytic_gradient = true,
                                   std::vector<MinimizeResult>* all = nullptr);

/// Objective on controls; `grad` has the shape of the segment values.
using ControlObjective = std::function<double(const ControlSignal& eps, Mat* grad)>;

struct ControlMaximum {
  ControlSignal control;
  double value = 0.0;
  /// Set when no start converged and a line search failed on every start.
  bool flagged = false;
  std::vector<double> start_values;
};

/// Maximizes over piecewise-constant signals with `segments` segments on
/// [0, horizon] inside `box`. Starts: zero, the upper and lower constants,
/// then cfg.multistart uniformly random admissible signals drawn from
/// cfg.seed.
ControlMaximum maximize_over_controls(const ControlObjective& objective,
                                      const AdmissibleBox& box, int segments,
                                      double horizon, const OptimizerConfig& cfg,
                                      bool analytic_gradient = true);

/// The starting signals used by maximize_over_controls.
std::vector<ControlSignal> control_starts(const AdmissibleBox& box, int segments,
                                          double horizon, const OptimizerConfig& cfg);

}  // namespace opid
