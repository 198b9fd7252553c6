#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "opid/controls.hpp"
#include "opid/dynamics.hpp"
#include "opid/linalg.hpp"
#include "opid/parallel.hpp"

namespace opid {

struct GNProblem {
  SystemModel model;
  BasisSet basis;
  std::vector<ControlSignal> controls;
  std::vector<Vec> data;
  int n_steps = 0;
  Execution exec = Execution::Parallel;

  void validate() const;
};

/// Builds a problem whose data are simulated at alpha_star.
GNProblem make_problem(const SystemModel& model, const BasisSet& basis,
                       const std::vector<ControlSignal>& controls, const Vec& alpha_star,
                       int n_steps = 0, Execution exec = Execution::Parallel);

/// Stacked R_m(alpha) = C y(A(alpha), eps_m; T) - data_m.
Vec residuals(const GNProblem& p, const Vec& alpha);
/// Column j stacks C dy(A_j, eps_m; T) linearized at A(alpha).
Mat jacobian(const GNProblem& p, const Vec& alpha);
void residuals_and_jacobian(const GNProblem& p, const Vec& alpha, Vec& r, Mat& jac);
/// 1/2 sum_m ||R_m(alpha)||^2.
double cost(const GNProblem& p, const Vec& alpha);

struct GNMatrix {
  Mat w;
  Spectrum spectrum;
};

GNMatrix gn_matrix(const GNProblem& p, const Vec& alpha);
/// J^T J for explicit directions linearized at `op`.
GNMatrix gn_matrix_at(const SystemModel& model, const Mat& op,
                      const std::vector<Mat>& directions,
                      const std::vector<ControlSignal>& controls, int n_steps,
                      Execution exec = Execution::Parallel);

struct GNSettings {
  int max_iters = 50;
  double step_tol = 1e-10;
  double resid_tol = 1e-12;
};

enum class GNVerdict { Converged, MaxIters, SingularNormalEquations, Diverged };
std::string verdict_name(GNVerdict v);

struct GNReport {
  std::vector<Vec> iterates;
  std::vector<double> residual_norms;
  std::vector<double> lambda_min;
  std::vector<double> lambda_max;
  GNVerdict verdict = GNVerdict::MaxIters;
  /// Number of accepted GN updates.
  int iterations = 0;
  std::string message;

  const Vec& final_iterate() const { return iterates.back(); }
};

GNReport gn_solve(const GNProblem& p, const Vec& alpha_init,
                  const GNSettings& settings = {});

/// Observed contraction ratios e_{k+1} / e_k^2 over iterates with
/// e_k <= radius, skipping errors already at roundoff level.
std::vector<double> contraction_ratios(const GNReport& report, const Vec& alpha_star,
                                       double radius = 1e-2, double floor = 1e-12);

/// ||A(alpha) - A(alpha_star)||_F / ||A(alpha_star)||_F.
double relative_frobenius_error(const BasisSet& basis, const Vec& alpha,
                                const Vec& alpha_star);

/// W~(alpha_star, alpha) for LinearDrift problems, by composite Simpson
/// quadrature of C exp((T - s) A(alpha_star)) A_j y(A(alpha), eps_m; s) on the
/// integration grid.
Mat wtilde(const GNProblem& p, const Vec& alpha_star, const Vec& alpha);

/// gn_report.txt and gn_iterates.csv in `dir`.
void write_report(const GNReport& report, const std::filesystem::path& dir,
                  const std::optional<Vec>& alpha_star = std::nullopt,
                  const BasisSet* basis = nullptr);

}  // namespace opid
