#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "opid/controls.hpp"
#include "opid/linalg.hpp"
#include "opid/parallel.hpp"

namespace opid {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& where, int step)
      : std::runtime_error(where + ": non-finite state at step " + std::to_string(step)),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Dynamics families. A denotes the unknown operator A(alpha).
///   LinearDrift          y' = A y + B u,            y(0) = 0
///   LinearControlMatrix  y' = M y + A u
///   Bilinear             y' = (A + u B) y   (unknown drift), or
///                        y' = (H + u A) y   (unknown control operator)
///   SchrodingerReal      y' = (H + u A) y   with H, A real embeddings of
///                                           Hermitian matrices (skew)
///   GeneralNonlinear     y' = g(y) + A u
enum class Family {
  LinearDrift,
  LinearControlMatrix,
  Bilinear,
  SchrodingerReal,
  GeneralNonlinear
};

enum class BilinearUnknown { Drift, Control };

std::string family_name(Family f);

/// g and its Jacobian g' for GeneralNonlinear models.
struct NonlinearTerm {
  std::function<Vec(const Vec&)> value;
  std::function<Mat(const Vec&)> jacobian;
};

struct SystemModel {
  Family family = Family::LinearDrift;
  BilinearUnknown unknown = BilinearUnknown::Drift;
  bool require_skew = true;

  Mat input_matrix;      // LinearDrift: B (N x M)
  Mat known_drift;       // LinearControlMatrix: M; Bilinear(Control), SchrodingerReal: H
  Mat control_operator;  // Bilinear(Drift): B (N x N)
  NonlinearTerm nonlinear;
  int control_channels = 1;  // LinearControlMatrix, GeneralNonlinear

  Mat observer;  // C (P x N)
  Vec initial_state;
  double horizon = 1.0;

  int dim() const { return static_cast<int>(initial_state.size()); }
  int channels() const;
  int outputs() const { return static_cast<int>(observer.rows()); }
  /// Shape of the unknown operator and of every basis element.
  Eigen::Index operator_rows() const { return dim(); }
  Eigen::Index operator_cols() const;
  /// True when the unknown operator multiplies the control.
  bool operator_on_control() const;

  static SystemModel linear_drift(Mat input_matrix, Mat observer, double horizon);
  static SystemModel linear_control_matrix(Mat drift, int channels, Mat observer,
                                           Vec initial_state, double horizon);
  static SystemModel bilinear_drift(Mat control_operator, Mat observer,
                                    Vec initial_state, double horizon);
  static SystemModel bilinear_control(Mat drift, Mat observer, Vec initial_state,
                                      double horizon, bool require_skew = true);
  static SystemModel schrodinger_real(Mat drift, Mat observer, Vec initial_state,
                                      double horizon);
  static SystemModel general_nonlinear(NonlinearTerm g, int channels, Mat observer,
                                       Vec initial_state, double horizon);
};

/// Linearly independent operators A_1..A_K; A(alpha) = sum alpha_j A_j.
class BasisSet {
 public:
  explicit BasisSet(std::vector<Mat> elements, Vec shift = Vec());

  static BasisSet canonical(Eigen::Index rows, Eigen::Index cols);

  int size() const { return static_cast<int>(elements_.size()); }
  const Mat& operator[](int j) const { return elements_[static_cast<std::size_t>(j)]; }
  const std::vector<Mat>& elements() const { return elements_; }
  Eigen::Index rows() const { return elements_.front().rows(); }
  Eigen::Index cols() const { return elements_.front().cols(); }
  /// Coefficients of A(alpha_circ); zero unless given.
  const Vec& shift() const { return shift_; }

  Mat combine(const Vec& alpha) const;
  /// Least-squares coefficients of `op` in the Frobenius sense.
  Vec coefficients_of(const Mat& op) const;

 private:
  std::vector<Mat> elements_;
  Vec shift_;
};

/// Errors on invalid shapes and on skew or initial-state violations.
void validate(const SystemModel& model);
void validate(const SystemModel& model, const BasisSet& basis);
void validate_operator(const SystemModel& model, const Mat& op, const char* what);

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  const Vec& final_state() const { return states.back(); }
};

/// True for Bilinear and SchrodingerReal models, which step with the exact
/// frozen-control propagator expm(h X) instead of RK4.
bool uses_exponential_steps(const SystemModel& model);

/// Step count used when a caller passes 0.
int default_steps(double horizon);

/// Control value applied on step `step`: the segment holding the step
/// midpoint, held constant over the whole step.
Vec step_control(const ControlSignal& eps, int step, int n_steps);

Vec rhs(const SystemModel& model, const Mat& op, const Vec& y, const Vec& u);
Mat state_jacobian(const SystemModel& model, const Mat& op, const Vec& y, const Vec& u);
Mat control_jacobian(const SystemModel& model, const Mat& op, const Vec& y, const Vec& u);
/// Derivative of the right-hand side in the operator argument along `direction`.
Vec operator_source(const SystemModel& model, const Mat& direction, const Vec& y,
                    const Vec& u);

Trajectory solve_forward(const SystemModel& model, const BasisSet& basis,
                         const Vec& alpha, const ControlSignal& eps, int n_steps);
Trajectory solve_forward(const SystemModel& model, const Mat& op,
                         const ControlSignal& eps, int n_steps);
Vec final_state(const SystemModel& model, const Mat& op, const ControlSignal& eps,
                int n_steps);

/// Base state and sensitivities at T for each direction, integrated on one
/// grid with the state. Column j of `sensitivities` is delta y(D_j; T).
struct LinearizedSolution {
  Vec state;
  Mat sensitivities;
};

LinearizedSolution solve_linearized_all(const SystemModel& model, const Mat& op,
                                        const std::vector<Mat>& directions,
                                        const ControlSignal& eps, int n_steps);

/// delta y(A_j; T) around A(alpha_lin). `j` is zero-based.
Vec solve_linearized(const SystemModel& model, const BasisSet& basis,
                     const Vec& alpha_lin, int j, const ControlSignal& eps,
                     int n_steps);

Vec observe(const SystemModel& model, const Vec& y);

std::vector<Vec> simulate_data(const SystemModel& model, const BasisSet& basis,
                               const Vec& alpha_star,
                               const std::vector<ControlSignal>& controls,
                               int n_steps, Execution exec = Execution::Parallel);

/// Minimum-energy transfer control u(t) = B^T exp((t0 - t) A^T) nu with
/// W_c(0, t0) nu = w, sampled at segment midpoints. Throws DomainError when
/// w is not reachable.
ControlSignal synth_transfer_control(const Mat& a, const Mat& b, const Vec& target,
                                     double t0, int segments = 200,
                                     double residual_tol = 1e-8);

/// Experiment output viewed as a function of the control segment values.
/// Two forms are provided:
///   difference:  C y(A_a, u; T) - C y(A_b, u; T)
///   linearized:  C delta y(D, u; T) around A_lin
/// `evaluate` optionally fills the P x (S*M) Jacobian with respect to the
/// segment values (column s*M + c) by propagating step tangents per segment,
/// which gives the exact derivative of the discrete map.
class ControlOutputMap {
 public:
  static ControlOutputMap difference(const SystemModel& model, Mat op_a, Mat op_b,
                                     int n_steps);
  static ControlOutputMap linearized(const SystemModel& model, Mat op_lin,
                                     Mat direction, int n_steps);

  Vec evaluate(const ControlSignal& eps, Mat* jacobian = nullptr) const;
  int outputs() const { return static_cast<int>(model_.observer.rows()); }

 private:
  enum class Kind { Difference, Linearized };
  ControlOutputMap(const SystemModel& model, Kind kind, Mat a, Mat b, int n_steps);

  Vec stacked_rhs(const Vec& z, const Vec& u) const;
  void stacked_jacobians(const Vec& z, const Vec& u, Mat& jz, Mat& ju) const;
  Vec evaluate_general(const ControlSignal& eps, Mat* jacobian) const;
  Vec evaluate_affine(const ControlSignal& eps, Mat* jacobian) const;
  Mat output_map() const;
  Vec initial_stacked() const;

  // Stacked right-hand side (f0 + sum_c u_c fc[c]) z + g u for every family
  // except GeneralNonlinear.
  bool affine_ = false;
  Mat f0_;
  std::vector<Mat> fc_;
  Mat g_;

  SystemModel model_;
  Kind kind_;
  Mat a_;
  Mat b_;
  int n_steps_;
};

}  // namespace opid
