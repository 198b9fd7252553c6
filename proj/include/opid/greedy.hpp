#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "opid/controls.hpp"
#include "opid/dynamics.hpp"
#include "opid/linalg.hpp"
#include "opid/optimizer.hpp"

namespace opid {

enum class Algorithm { LGR, GR, OGR, OLGR };

std::string algorithm_name(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

/// Gram matrix of observed sensitivities for one control.
struct WMatrix {
  Mat w;         // K x K, entry (i, j) = <C dy(A_i), C dy(A_j)>
  Mat observed;  // P x K, column j = C dy(A_j; T)
};

/// Linearization at A(alpha_circ).
WMatrix build_W(const SystemModel& model, const BasisSet& basis, const Vec& alpha_circ,
                const ControlSignal& eps, int n_steps);
/// Same, for an explicit linearization point and direction list.
WMatrix build_W(const SystemModel& model, const Mat& op_lin,
                const std::vector<Mat>& directions, const ControlSignal& eps,
                int n_steps);

/// beta = G^{-1} b for G the leading k x k block and b the head of the last
/// column. Empty when G is not positive definite to 1e-12 relative.
std::optional<Vec> fitting_closed_form(const Mat& w_hat_k);
Vec kernel_vector(const Vec& beta);

struct GreedySettings {
  /// Channel-wise bound used when `box` is empty: [-bound, bound].
  double bound = 1.0;
  std::optional<AdmissibleBox> box;
  int segments = 10;
  int n_steps = 0;
  OptimizerConfig opt;
  double compact_radius = 10.0;
  double tol1 = 1e-6;
  double tol2 = 1e-6;
  /// Splitting values at or below positivity_tol * max(1, lambda_max(W_hat))
  /// raise a warning.
  double positivity_tol = 1e-10;
  int max_split_retries = 3;

  AdmissibleBox resolve_box(int channels) const;
};

struct IterationLog {
  int iteration = 0;  // number of selected elements after this step
  std::string step;   // init, split, skip
  int selected = -1;  // index into the input set
  Vec beta;
  double fitting_value = 0.0;
  double splitting_value = 0.0;
  Vec spectrum;  // eigenvalues of the cumulative W_hat on the selected block
  int retries = 0;
  bool warning = false;
  /// Other fitting minimizers whose value is within 1e-8 relative of the best.
  std::vector<Vec> alternative_minimizers;
};

struct GreedyOutcome {
  Algorithm algorithm = Algorithm::LGR;
  std::vector<ControlSignal> controls;
  std::vector<int> order;      // input indices in selection order
  std::vector<Mat> selected;   // selected elements as used by the algorithm
  std::vector<IterationLog> log;
  std::vector<std::string> warnings;
  Mat w_hat;  // cumulative linearized GN matrix on the selected elements
  Spectrum spectrum;
};

GreedyOutcome lgr(const SystemModel& model, const BasisSet& basis,
                  const Vec& alpha_circ, const GreedySettings& settings);
GreedyOutcome gr(const SystemModel& model, const BasisSet& basis,
                 const Vec& alpha_circ, const GreedySettings& settings);

/// OGR on the nonlinear system, or OLGR on its linearization when `linearized`
/// is set. `candidates` may hold more than N^2 matrices and dependent ones.
/// `shift` is the operator every candidate is offset by (zero when empty).
GreedyOutcome ogr(const SystemModel& model, const std::vector<Mat>& candidates,
                  const Mat& shift, const GreedySettings& settings,
                  bool linearized = false);

/// Dispatch by name. For LGR and GR the basis shift gives alpha_circ; for
/// OGR and OLGR the elements of `basis` are the candidate set and the shift
/// is A(alpha_circ).
GreedyOutcome run_greedy(Algorithm algorithm, const SystemModel& model,
                         const std::vector<Mat>& elements, const Vec& alpha_circ,
                         const GreedySettings& settings);

/// Writes controls/control_NN.csv, basis_order.txt, selected_basis.json and
/// greedy_log.txt into `dir`.
void write_outcome(const GreedyOutcome& outcome, const std::filesystem::path& dir);
std::vector<ControlSignal> read_controls_dir(const std::filesystem::path& dir);

}  // namespace opid
