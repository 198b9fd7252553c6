#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opid/controls.hpp"
#include "opid/dynamics.hpp"
#include "opid/gauss_newton.hpp"
#include "opid/greedy.hpp"
#include "opid/linalg.hpp"
#include "opid/parallel.hpp"

namespace opid {

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

/// One identification experiment: model, unknown operator, initial guess,
/// offline algorithm and the robustness sweep around the true operator.
struct Scenario {
  std::string name = "scenario";
  SystemModel model;
  /// Basis for LGR and GR, candidate set for OGR and OLGR.
  std::vector<Mat> elements;
  Mat op_star;
  Mat op_circ;
  Algorithm algorithm = Algorithm::LGR;
  /// Linearize (LGR, OLGR) or offset the candidates (OGR) at op_circ.
  /// When false the offline phase works around the zero operator.
  bool use_shift = true;
  GreedySettings greedy;
  GNSettings gn;
  std::vector<double> radii{0.1, 0.5, 1.0};
  int trials = 100;
  double tolerance = 0.005;
  std::uint64_t seed = 0;
  Execution exec = Execution::Parallel;

  void validate() const;
};

// Random instances ----------------------------------------------------------

/// x + rho ||x||_F u with u uniform on the Frobenius unit sphere.
Mat perturb_relative(const Mat& x, double rho, std::uint64_t seed);

struct DriftInstance {
  Mat a_star;
  Mat b;
  Mat c;
  Mat a_circ;
};

/// Standard normal A_star, B, C resampled until every matrix has full rank,
/// and (C, A) observable and (A, B) controllable at both A_star and A_circ.
DriftInstance random_drift_instance(int n, int inputs, int outputs, double rho,
                                    std::uint64_t seed);

/// LinearDrift scenario with the canonical basis.
Scenario drift_scenario(const DriftInstance& inst, double horizon = 1.0,
                        Algorithm algorithm = Algorithm::LGR);

/// `count` standard normal matrices resampled until linearly independent.
std::vector<Mat> random_basis(Eigen::Index rows, Eigen::Index cols, int count,
                              std::uint64_t seed);
/// E_ij - E_ji for i < j, a basis of so(n).
std::vector<Mat> skew_canonical_basis(int n);
/// `count` random skew-symmetric matrices resampled until independent.
std::vector<Mat> random_skew_basis(int n, int count, std::uint64_t seed);
/// Canonical elements followed by `extra` random ones.
std::vector<Mat> union_basis(Eigen::Index rows, Eigen::Index cols, int extra,
                             std::uint64_t seed);

// Schrodinger systems ---------------------------------------------------------

/// [[M_I, M_R], [-M_R, M_I]], the real form of -i M acting on [psi_R; psi_I].
Mat embed_hermitian(const CMat& m);
Vec embed_state(const CVec& psi);
/// Rows [a^T b^T] and [-b^T a^T] for psi1 = a + i b, giving Re and Im of
/// <psi1, psi>.
Mat embed_observer(const CVec& psi1);

/// Real diagonal units, then E_ij + E_ji and i(E_ij - E_ji) for i < j.
std::vector<CMat> hermitian_canonical_basis(int n);
std::vector<CMat> random_hermitian_basis(int n, int count, std::uint64_t seed);

struct SchrodingerSetup {
  SystemModel model;
  BasisSet basis;
};

SchrodingerSetup setup_schrodinger(const CMat& h, const std::vector<CMat>& mu_basis,
                                   const CVec& psi0, const CVec& psi1, double horizon);

struct SchrodingerReference {
  CMat h;
  CMat mu_star;
  CVec psi0;
  CVec psi1;
  double horizon = 0.0;
};

/// Three-level system with H = diag(4, 8, 16) and a dense Hermitian dipole.
SchrodingerReference reference_schrodinger();

// Sphere sampling and sweeps ------------------------------------------------

/// n points x with ||A(x) - A(center)||_F = radius_rel ||A(center)||_F, in
/// Gaussian directions of coefficient space.
std::vector<Vec> sample_sphere(const BasisSet& basis, const Vec& center,
                               double radius_rel, int n, std::uint64_t seed);

struct TrialResult {
  double radius = 0.0;
  int trial = 0;
  bool success = false;
  double rel_error = 0.0;
  GNVerdict verdict = GNVerdict::MaxIters;
  int iterations = 0;
};

struct RadiusSummary {
  double radius = 0.0;
  int trials = 0;
  int successes = 0;
  double percentage = 0.0;

  bool operator==(const RadiusSummary& o) const = default;
};

struct SweepResult {
  std::string name;
  std::string algorithm;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  std::vector<RadiusSummary> summary;
  std::vector<TrialResult> trials;
  std::vector<ControlSignal> controls;
  std::vector<std::string> warnings;
  double offline_seconds = 0.0;
  double online_seconds = 0.0;
};

/// Operators the GN phase reconstructs in: the input basis for LGR and GR,
/// the selected elements for OGR and OLGR.
BasisSet reconstruction_basis(const Scenario& s, const GreedyOutcome& outcome);

GreedyOutcome design_controls(const Scenario& s);

/// Designs controls offline, then sweeps.
SweepResult run_sweep(const Scenario& s);
/// Sweeps with fixed controls in the given reconstruction basis.
SweepResult run_sweep(const Scenario& s, const std::vector<ControlSignal>& controls,
                      const BasisSet& basis);

std::string sweep_to_csv(const std::vector<RadiusSummary>& summary);
std::vector<RadiusSummary> sweep_from_csv(const std::string& text);
std::vector<RadiusSummary> read_sweep_csv(const std::filesystem::path& path);
std::string trials_to_csv(const std::vector<TrialResult>& trials);
std::vector<RadiusSummary> summarize(const std::vector<double>& radii,
                                     const std::vector<TrialResult>& trials);

/// sweep.csv, trials.csv, controls/, report.txt and plot_sweep.py.
void emit_outputs(const SweepResult& result, const std::filesystem::path& dir);

// Analytic 2x2 bilinear example ---------------------------------------------

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct OracleReport {
  std::vector<Check> checks;
  std::vector<std::string> observations;
  double eps1 = 0.0;
  double eps2 = 0.0;
  double fitting_minimizer = 0.0;
  double seconds = 0.0;

  bool passed() const;
};

/// Closed-form sum_m ||R_m||^2 for the two controls +1 and -1 at |alpha| = r.
double oracle_cost_closed_form(double r);
/// Second derivative of the closed form in r.
double oracle_cost_curvature(double r);

OracleReport analytic_oracle(std::uint64_t seed = 0, Execution exec = Execution::Parallel);

// Hypothesis diagnostics ----------------------------------------------------

struct Diagnosis {
  int dim = 0;
  int observability_rank = -1;
  int controllability_rank = -1;
  int lie_dimension = -1;
  double gramian_lambda_min = 0.0;
  std::vector<Check> checks;

  bool passed() const;
};

/// Rank, Gramian and Lie-algebra checks at the linearization point op_circ.
Diagnosis diagnose(const SystemModel& model, const Mat& op_circ, double control_bound = 1.0);

std::string format_checks(const std::vector<Check>& checks);

}  // namespace opid
