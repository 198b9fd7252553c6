#include "opid/dynamics.hpp"

#include <cmath>

namespace opid {

std::string family_name(Family f) {
  switch (f) {
    case Family::LinearDrift: return "linear_drift";
    case Family::LinearControlMatrix: return "linear_control_matrix";
    case Family::Bilinear: return "bilinear";
    case Family::SchrodingerReal: return "schrodinger_real";
    case Family::GeneralNonlinear: return "general_nonlinear";
  }
  return "unknown";
}

namespace {

// y' = (H + u A) y with A unknown.
bool unknown_multiplies_state_control(const SystemModel& m) {
  return m.family == Family::SchrodingerReal ||
         (m.family == Family::Bilinear && m.unknown == BilinearUnknown::Control);
}

bool needs_skew(const SystemModel& m) {
  return m.family == Family::SchrodingerReal ||
         (m.family == Family::Bilinear && m.require_skew);
}

void require_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols,
                   const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(what + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) +
                         "x" + std::to_string(m.cols()));
  }
}

int resolve_steps(const SystemModel& model, int n_steps) {
  const int n = n_steps == 0 ? default_steps(model.horizon) : n_steps;
  if (n < 1) throw DomainError("n_steps must be >= 1");
  return n;
}

void check_control(const SystemModel& model, const ControlSignal& eps) {
  if (eps.channels() != model.channels()) {
    throw DimensionError("control has " + std::to_string(eps.channels()) +
                         " channels, model expects " +
                         std::to_string(model.channels()));
  }
  if (std::abs(eps.horizon() - model.horizon) > 1e-12 * model.horizon) {
    throw DomainError("control horizon differs from model horizon");
  }
}

void check_finite_state(const Vec& z, const char* where, int step) {
  if (!z.allFinite()) throw DivergenceError(where, step);
}

// Generator of a linear-in-y model for a frozen control value.
Mat linear_generator(const SystemModel& m, const Mat& op, const Vec& u) {
  if (unknown_multiplies_state_control(m)) return m.known_drift + u(0) * op;
  return op + u(0) * m.control_operator;
}

// Source matrix S with operator_source(D, y, u) = S y for linear-in-y models.
Mat linear_source(const SystemModel& m, const Mat& direction, const Vec& u) {
  if (unknown_multiplies_state_control(m)) return u(0) * direction;
  return direction;
}

// Step propagators recomputed only when the frozen control value changes.
class PropagatorCache {
 public:
  PropagatorCache(const SystemModel& m, const Mat& op, double h) : m_(m), op_(op), h_(h) {}
  const Mat& at(const Vec& u) {
    if (!valid_ || u != u_) {
      e_ = expm(h_ * linear_generator(m_, op_, u));
      u_ = u;
      valid_ = true;
    }
    return e_;
  }

 private:
  const SystemModel& m_;
  const Mat& op_;
  double h_;
  bool valid_ = false;
  Vec u_;
  Mat e_;
};

// One classical RK4 step with the control frozen over all stages.
template <class F>
Vec rk4_step(const F& f, const Vec& z, const Vec& u, double h) {
  const Vec k1 = f(z, u);
  const Vec k2 = f(z + 0.5 * h * k1, u);
  const Vec k3 = f(z + 0.5 * h * k2, u);
  const Vec k4 = f(z + h * k3, u);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

int SystemModel::channels() const {
  switch (family) {
    case Family::LinearDrift: return static_cast<int>(input_matrix.cols());
    case Family::LinearControlMatrix:
    case Family::GeneralNonlinear: return control_channels;
    case Family::Bilinear:
    case Family::SchrodingerReal: return 1;
  }
  return 0;
}

Eigen::Index SystemModel::operator_cols() const {
  if (family == Family::LinearControlMatrix || family == Family::GeneralNonlinear) {
    return control_channels;
  }
  return dim();
}

bool SystemModel::operator_on_control() const {
  return family == Family::LinearControlMatrix ||
         family == Family::GeneralNonlinear || unknown_multiplies_state_control(*this);
}

SystemModel SystemModel::linear_drift(Mat input_matrix, Mat observer, double horizon) {
  SystemModel m;
  m.family = Family::LinearDrift;
  m.initial_state = Vec::Zero(input_matrix.rows());
  m.input_matrix = std::move(input_matrix);
  m.observer = std::move(observer);
  m.horizon = horizon;
  validate(m);
  return m;
}

SystemModel SystemModel::linear_control_matrix(Mat drift, int channels, Mat observer,
                                               Vec initial_state, double horizon) {
  SystemModel m;
  m.family = Family::LinearControlMatrix;
  m.known_drift = std::move(drift);
  m.control_channels = channels;
  m.observer = std::move(observer);
  m.initial_state = std::move(initial_state);
  m.horizon = horizon;
  validate(m);
  return m;
}

SystemModel SystemModel::bilinear_drift(Mat control_operator, Mat observer,
                                        Vec initial_state, double horizon) {
  SystemModel m;
  m.family = Family::Bilinear;
  m.unknown = BilinearUnknown::Drift;
  m.control_operator = std::move(control_operator);
  m.observer = std::move(observer);
  m.initial_state = std::move(initial_state);
  m.horizon = horizon;
  validate(m);
  return m;
}

SystemModel SystemModel::bilinear_control(Mat drift, Mat observer, Vec initial_state,
                                          double horizon, bool require_skew) {
  SystemModel m;
  m.family = Family::Bilinear;
  m.unknown = BilinearUnknown::Control;
  m.require_skew = require_skew;
  m.known_drift = std::move(drift);
  m.observer = std::move(observer);
  m.initial_state = std::move(initial_state);
  m.horizon = horizon;
  validate(m);
  return m;
}

SystemModel SystemModel::schrodinger_real(Mat drift, Mat observer, Vec initial_state,
                                          double horizon) {
  SystemModel m;
  m.family = Family::SchrodingerReal;
  m.unknown = BilinearUnknown::Control;
  m.known_drift = std::move(drift);
  m.observer = std::move(observer);
  m.initial_state = std::move(initial_state);
  m.horizon = horizon;
  validate(m);
  return m;
}

SystemModel SystemModel::general_nonlinear(NonlinearTerm g, int channels, Mat observer,
                                           Vec initial_state, double horizon) {
  SystemModel m;
  m.family = Family::GeneralNonlinear;
  m.nonlinear = std::move(g);
  m.control_channels = channels;
  m.observer = std::move(observer);
  m.initial_state = std::move(initial_state);
  m.horizon = horizon;
  validate(m);
  return m;
}

BasisSet::BasisSet(std::vector<Mat> elements, Vec shift)
    : elements_(std::move(elements)), shift_(std::move(shift)) {
  if (elements_.empty()) throw DomainError("BasisSet: needs at least one element");
  const Eigen::Index r = elements_.front().rows();
  const Eigen::Index c = elements_.front().cols();
  Mat stacked(r * c, static_cast<Eigen::Index>(elements_.size()));
  for (std::size_t j = 0; j < elements_.size(); ++j) {
    require_shape(elements_[j], r, c, "BasisSet element " + std::to_string(j));
    require_finite(elements_[j], "BasisSet");
    stacked.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Vec>(elements_[j].data(), r * c);
  }
  if (numerical_rank(stacked) < size()) {
    throw DomainError("BasisSet: elements are linearly dependent");
  }
  if (shift_.size() == 0) {
    shift_ = Vec::Zero(size());
  } else if (shift_.size() != size()) {
    throw DimensionError("BasisSet: shift length differs from basis size");
  }
}

BasisSet BasisSet::canonical(Eigen::Index rows, Eigen::Index cols) {
  std::vector<Mat> e;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      Mat m = Mat::Zero(rows, cols);
      m(i, j) = 1.0;
      e.push_back(std::move(m));
    }
  }
  return BasisSet(std::move(e));
}

Mat BasisSet::combine(const Vec& alpha) const {
  if (alpha.size() != size()) {
    throw DimensionError("BasisSet::combine: alpha has length " +
                         std::to_string(alpha.size()) + ", basis has " +
                         std::to_string(size()));
  }
  Mat out = Mat::Zero(rows(), cols());
  for (int j = 0; j < size(); ++j) out += alpha(j) * elements_[static_cast<std::size_t>(j)];
  return out;
}

Vec BasisSet::coefficients_of(const Mat& op) const {
  require_shape(op, rows(), cols(), "BasisSet::coefficients_of");
  Mat stacked(rows() * cols(), size());
  for (int j = 0; j < size(); ++j) {
    stacked.col(j) = Eigen::Map<const Vec>((*this)[j].data(), rows() * cols());
  }
  const Vec target = Eigen::Map<const Vec>(op.data(), op.size());
  return stacked.colPivHouseholderQr().solve(target);
}

void validate(const SystemModel& m) {
  const Eigen::Index n = m.dim();
  if (n < 1) throw DimensionError("model: state dimension must be >= 1");
  if (!(m.horizon > 0.0) || !std::isfinite(m.horizon)) {
    throw DomainError("model: horizon must be positive");
  }
  require_finite(m.initial_state, "model initial state");
  if (m.observer.cols() != n) {
    throw DimensionError("model: observer has " + std::to_string(m.observer.cols()) +
                         " columns, state dimension is " + std::to_string(n));
  }
  require_finite(m.observer, "model observer");
  switch (m.family) {
    case Family::LinearDrift:
      if (m.input_matrix.rows() != n || m.input_matrix.cols() < 1) {
        throw DimensionError("linear drift: B must be N x M with M >= 1");
      }
      require_finite(m.input_matrix, "linear drift B");
      if (!m.initial_state.isZero(0.0)) {
        throw DomainError("linear drift: initial state must be zero");
      }
      break;
    case Family::LinearControlMatrix:
      require_shape(m.known_drift, n, n, "linear control matrix drift");
      require_finite(m.known_drift, "linear control matrix drift");
      if (m.control_channels < 1) throw DomainError("channels must be >= 1");
      break;
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(m)) {
        require_shape(m.known_drift, n, n, "bilinear drift H");
        require_finite(m.known_drift, "bilinear drift H");
        if (needs_skew(m) && !is_skew(m.known_drift)) {
          throw DomainError("bilinear drift H must be skew-symmetric");
        }
      } else {
        require_shape(m.control_operator, n, n, "bilinear control operator B");
        require_finite(m.control_operator, "bilinear control operator B");
        if (needs_skew(m) && !is_skew(m.control_operator)) {
          throw DomainError("bilinear control operator B must be skew-symmetric");
        }
      }
      break;
    case Family::GeneralNonlinear:
      if (!m.nonlinear.value || !m.nonlinear.jacobian) {
        throw DomainError("general nonlinear: g and g' are required");
      }
      if (m.control_channels < 1) throw DomainError("channels must be >= 1");
      break;
  }
}

void validate_operator(const SystemModel& model, const Mat& op, const char* what) {
  require_shape(op, model.operator_rows(), model.operator_cols(), what);
  require_finite(op, what);
  if (needs_skew(model) && !is_skew(op)) {
    throw DomainError(std::string(what) + ": must be skew-symmetric");
  }
}

void validate(const SystemModel& model, const BasisSet& basis) {
  validate(model);
  for (int j = 0; j < basis.size(); ++j) {
    validate_operator(model, basis[j], "basis element");
  }
}

bool uses_exponential_steps(const SystemModel& model) {
  return model.family == Family::Bilinear || model.family == Family::SchrodingerReal;
}

int default_steps(double horizon) { return horizon <= 10.0 ? 1000 : 5000; }

Vec step_control(const ControlSignal& eps, int step, int n_steps) {
  const double t = (step + 0.5) * eps.horizon() / n_steps;
  return eps.eval(t);
}

Vec rhs(const SystemModel& m, const Mat& op, const Vec& y, const Vec& u) {
  switch (m.family) {
    case Family::LinearDrift: return op * y + m.input_matrix * u;
    case Family::LinearControlMatrix: return m.known_drift * y + op * u;
    case Family::GeneralNonlinear: return m.nonlinear.value(y) + op * u;
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(m)) return m.known_drift * y + u(0) * (op * y);
      return op * y + u(0) * (m.control_operator * y);
  }
  return Vec();
}

Mat state_jacobian(const SystemModel& m, const Mat& op, const Vec& y, const Vec& u) {
  switch (m.family) {
    case Family::LinearDrift: return op;
    case Family::LinearControlMatrix: return m.known_drift;
    case Family::GeneralNonlinear: return m.nonlinear.jacobian(y);
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(m)) return m.known_drift + u(0) * op;
      return op + u(0) * m.control_operator;
  }
  return Mat();
}

Mat control_jacobian(const SystemModel& m, const Mat& op, const Vec& y, const Vec&) {
  switch (m.family) {
    case Family::LinearDrift: return m.input_matrix;
    case Family::LinearControlMatrix:
    case Family::GeneralNonlinear: return op;
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(m)) return op * y;
      return m.control_operator * y;
  }
  return Mat();
}

Vec operator_source(const SystemModel& m, const Mat& direction, const Vec& y,
                    const Vec& u) {
  switch (m.family) {
    case Family::LinearDrift: return direction * y;
    case Family::LinearControlMatrix:
    case Family::GeneralNonlinear: return direction * u;
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(m)) return u(0) * (direction * y);
      return direction * y;
  }
  return Vec();
}

Trajectory solve_forward(const SystemModel& model, const Mat& op,
                         const ControlSignal& eps, int n_steps) {
  validate_operator(model, op, "operator");
  check_control(model, eps);
  const int n = resolve_steps(model, n_steps);
  const double h = model.horizon / n;
  auto f = [&](const Vec& y, const Vec& u) { return rhs(model, op, y, u); };

  Trajectory traj;
  traj.times.reserve(static_cast<std::size_t>(n) + 1);
  traj.states.reserve(static_cast<std::size_t>(n) + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(model.initial_state);
  const bool exact = uses_exponential_steps(model);
  PropagatorCache cache(model, op, h);
  for (int k = 0; k < n; ++k) {
    const Vec u = step_control(eps, k, n);
    Vec next = exact ? Vec(cache.at(u) * traj.states.back()) : rk4_step(f, traj.states.back(), u, h);
    check_finite_state(next, "solve_forward", k + 1);
    traj.states.push_back(std::move(next));
    traj.times.push_back(k + 1 == n ? model.horizon : (k + 1) * h);
  }
  return traj;
}

Trajectory solve_forward(const SystemModel& model, const BasisSet& basis,
                         const Vec& alpha, const ControlSignal& eps, int n_steps) {
  return solve_forward(model, basis.combine(alpha), eps, n_steps);
}

Vec final_state(const SystemModel& model, const Mat& op, const ControlSignal& eps,
                int n_steps) {
  validate_operator(model, op, "operator");
  check_control(model, eps);
  const int n = resolve_steps(model, n_steps);
  const double h = model.horizon / n;
  auto f = [&](const Vec& y, const Vec& u) { return rhs(model, op, y, u); };
  Vec y = model.initial_state;
  const bool exact = uses_exponential_steps(model);
  PropagatorCache cache(model, op, h);
  for (int k = 0; k < n; ++k) {
    const Vec u = step_control(eps, k, n);
    y = exact ? Vec(cache.at(u) * y) : rk4_step(f, y, u, h);
    check_finite_state(y, "final_state", k + 1);
  }
  return y;
}

LinearizedSolution solve_linearized_all(const SystemModel& model, const Mat& op,
                                        const std::vector<Mat>& directions,
                                        const ControlSignal& eps, int n_steps) {
  validate_operator(model, op, "operator");
  for (const Mat& d : directions) {
    require_shape(d, model.operator_rows(), model.operator_cols(), "direction");
  }
  check_control(model, eps);
  const int n = resolve_steps(model, n_steps);
  const double h = model.horizon / n;
  const Eigen::Index dim = model.dim();
  const Eigen::Index k_dirs = static_cast<Eigen::Index>(directions.size());

  // Columns: base state followed by one sensitivity per direction.
  auto f = [&](const Mat& z, const Vec& u) {
    const Vec y = z.col(0);
    Mat dz(dim, 1 + k_dirs);
    dz.col(0) = rhs(model, op, y, u);
    const Mat jy = state_jacobian(model, op, y, u);
    dz.rightCols(k_dirs) = jy * z.rightCols(k_dirs);
    for (Eigen::Index j = 0; j < k_dirs; ++j) {
      dz.col(1 + j) += operator_source(model, directions[static_cast<std::size_t>(j)], y, u);
    }
    return dz;
  };

  Mat z = Mat::Zero(dim, 1 + k_dirs);
  z.col(0) = model.initial_state;
  if (uses_exponential_steps(model)) {
    // y+ = E y and dy_j+ = L_j y + E dy_j, where E and L_j are blocks of
    // expm(h [[X, 0], [S_j, X]]) for the frozen generator X.
    Vec u_prev;
    Mat e;
    std::vector<Mat> l(static_cast<std::size_t>(k_dirs));
    for (int k = 0; k < n; ++k) {
      const Vec u = step_control(eps, k, n);
      if (k == 0 || u != u_prev) {
        const Mat x = h * linear_generator(model, op, u);
        e = expm(x);
        for (Eigen::Index j = 0; j < k_dirs; ++j) {
          const auto ji = static_cast<std::size_t>(j);
          l[ji] = expm_frechet(x, h * linear_source(model, directions[ji], u));
        }
        u_prev = u;
      }
      const Vec y = z.col(0);
      z = e * z;
      for (Eigen::Index j = 0; j < k_dirs; ++j) {
        z.col(1 + j) += l[static_cast<std::size_t>(j)] * y;
      }
      if (!z.allFinite()) throw DivergenceError("solve_linearized", k + 1);
    }
    return LinearizedSolution{z.col(0), z.rightCols(k_dirs)};
  }
  for (int k = 0; k < n; ++k) {
    const Vec u = step_control(eps, k, n);
    const Mat k1 = f(z, u);
    const Mat k2 = f(z + 0.5 * h * k1, u);
    const Mat k3 = f(z + 0.5 * h * k2, u);
    const Mat k4 = f(z + h * k3, u);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!z.allFinite()) throw DivergenceError("solve_linearized", k + 1);
  }
  return LinearizedSolution{z.col(0), z.rightCols(k_dirs)};
}

Vec solve_linearized(const SystemModel& model, const BasisSet& basis,
                     const Vec& alpha_lin, int j, const ControlSignal& eps,
                     int n_steps) {
  if (j < 0 || j >= basis.size()) {
    throw DomainError("solve_linearized: direction index out of range");
  }
  return solve_linearized_all(model, basis.combine(alpha_lin), {basis[j]}, eps, n_steps)
      .sensitivities.col(0);
}

Vec observe(const SystemModel& model, const Vec& y) {
  if (y.size() != model.dim()) throw DimensionError("observe: state length mismatch");
  return model.observer * y;
}

std::vector<Vec> simulate_data(const SystemModel& model, const BasisSet& basis,
                               const Vec& alpha_star,
                               const std::vector<ControlSignal>& controls,
                               int n_steps, Execution exec) {
  const Mat op = basis.combine(alpha_star);
  std::vector<Vec> data(controls.size());
  parallel_for(static_cast<int>(controls.size()), exec, [&](int m) {
    const auto i = static_cast<std::size_t>(m);
    data[i] = observe(model, final_state(model, op, controls[i], n_steps));
  });
  return data;
}

ControlSignal synth_transfer_control(const Mat& a, const Mat& b, const Vec& target,
                                     double t0, int segments, double residual_tol) {
  require_square(a, "synth_transfer_control");
  if (b.rows() != a.rows() || target.size() != a.rows()) {
    throw DimensionError("synth_transfer_control: dimension mismatch");
  }
  if (segments < 1) throw DomainError("synth_transfer_control: segments must be >= 1");
  const double scale = std::max(1.0, target.norm());

  const Mat kalman = controllability_matrix(a, b);
  const Vec coeffs = kalman.completeOrthogonalDecomposition().solve(target);
  if ((kalman * coeffs - target).norm() > residual_tol * scale) {
    throw DomainError("synth_transfer_control: target is not reachable");
  }

  const Mat w = gramian(a, b, t0);
  const Vec nu = w.completeOrthogonalDecomposition().solve(target);
  if ((w * nu - target).norm() > residual_tol * scale) {
    throw DomainError("synth_transfer_control: Gramian solve residual too large");
  }

  const double width = t0 / segments;
  Mat values(segments, b.cols());
  for (int s = 0; s < segments; ++s) {
    const double t = (s + 0.5) * width;
    values.row(s) = (b.transpose() * expm((t0 - t) * a.transpose()) * nu).transpose();
  }
  return ControlSignal(std::move(values), t0);
}

ControlOutputMap::ControlOutputMap(const SystemModel& model, Kind kind, Mat a, Mat b,
                                   int n_steps)
    : model_(model), kind_(kind), a_(std::move(a)), b_(std::move(b)),
      n_steps_(resolve_steps(model, n_steps)) {
  validate(model_);
  validate_operator(model_, a_, "ControlOutputMap operator");
  if (kind_ == Kind::Difference) {
    validate_operator(model_, b_, "ControlOutputMap operator");
  } else {
    require_shape(b_, model_.operator_rows(), model_.operator_cols(),
                  "ControlOutputMap direction");
  }

  const Eigen::Index n = model_.dim();
  const Eigen::Index m = model_.channels();
  const bool diff = kind_ == Kind::Difference;
  f0_ = Mat::Zero(2 * n, 2 * n);
  fc_.assign(static_cast<std::size_t>(m), Mat::Zero(2 * n, 2 * n));
  g_ = Mat::Zero(2 * n, m);
  // Upper-left/lower-right blocks and the coupling block of a stacked matrix.
  auto stack = [&](Mat& dst, const Mat& top, const Mat& bottom, const Mat* coupling) {
    dst.topLeftCorner(n, n) = top;
    dst.bottomRightCorner(n, n) = bottom;
    if (coupling) dst.bottomLeftCorner(n, n) = *coupling;
  };
  affine_ = true;
  switch (model_.family) {
    case Family::LinearDrift:
      stack(f0_, a_, diff ? b_ : a_, diff ? nullptr : &b_);
      g_.topRows(n) = model_.input_matrix;
      if (diff) g_.bottomRows(n) = model_.input_matrix;
      break;
    case Family::LinearControlMatrix:
      stack(f0_, model_.known_drift, model_.known_drift, nullptr);
      g_.topRows(n) = a_;
      g_.bottomRows(n) = b_;
      break;
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(model_)) {
        stack(f0_, model_.known_drift, model_.known_drift, nullptr);
        stack(fc_[0], a_, diff ? b_ : a_, diff ? nullptr : &b_);
      } else {
        stack(f0_, a_, diff ? b_ : a_, diff ? nullptr : &b_);
        stack(fc_[0], model_.control_operator, model_.control_operator, nullptr);
      }
      break;
    case Family::GeneralNonlinear:
      affine_ = false;
      break;
  }
}

ControlOutputMap ControlOutputMap::difference(const SystemModel& model, Mat op_a,
                                              Mat op_b, int n_steps) {
  return ControlOutputMap(model, Kind::Difference, std::move(op_a), std::move(op_b),
                          n_steps);
}

ControlOutputMap ControlOutputMap::linearized(const SystemModel& model, Mat op_lin,
                                              Mat direction, int n_steps) {
  return ControlOutputMap(model, Kind::Linearized, std::move(op_lin),
                          std::move(direction), n_steps);
}

Vec ControlOutputMap::stacked_rhs(const Vec& z, const Vec& u) const {
  const Eigen::Index n = model_.dim();
  Vec dz(2 * n);
  const Vec y = z.head(n);
  if (kind_ == Kind::Difference) {
    dz.head(n) = rhs(model_, a_, y, u);
    dz.tail(n) = rhs(model_, b_, z.tail(n), u);
  } else {
    dz.head(n) = rhs(model_, a_, y, u);
    dz.tail(n) = state_jacobian(model_, a_, y, u) * z.tail(n) +
                 operator_source(model_, b_, y, u);
  }
  return dz;
}

void ControlOutputMap::stacked_jacobians(const Vec& z, const Vec& u, Mat& jz,
                                         Mat& ju) const {
  const Eigen::Index n = model_.dim();
  const Eigen::Index m = model_.channels();
  jz.setZero(2 * n, 2 * n);
  ju.setZero(2 * n, m);
  const Vec y = z.head(n);
  const Mat jy = state_jacobian(model_, a_, y, u);
  jz.topLeftCorner(n, n) = jy;
  ju.topRows(n) = control_jacobian(model_, a_, y, u);
  if (kind_ == Kind::Difference) {
    const Vec y2 = z.tail(n);
    jz.bottomRightCorner(n, n) = state_jacobian(model_, b_, y2, u);
    ju.bottomRows(n) = control_jacobian(model_, b_, y2, u);
    return;
  }

  // Lower block of d/dz, d/du of  J(y, u) delta + source(D, y, u).
  const Vec delta = z.tail(n);
  jz.bottomRightCorner(n, n) = jy;
  switch (model_.family) {
    case Family::LinearDrift:
      jz.bottomLeftCorner(n, n) = b_;
      break;
    case Family::LinearControlMatrix:
      ju.bottomRows(n) = b_;
      break;
    case Family::GeneralNonlinear: {
      const double step = 1e-6 * std::max(1.0, y.lpNorm<Eigen::Infinity>());
      for (Eigen::Index i = 0; i < n; ++i) {
        Vec yp = y;
        Vec ym = y;
        yp(i) += step;
        ym(i) -= step;
        jz.block(n, i, n, 1) = (model_.nonlinear.jacobian(yp) * delta -
                                model_.nonlinear.jacobian(ym) * delta) /
                               (2.0 * step);
      }
      ju.bottomRows(n) = b_;
      break;
    }
    case Family::Bilinear:
    case Family::SchrodingerReal:
      if (unknown_multiplies_state_control(model_)) {
        jz.bottomLeftCorner(n, n) = u(0) * b_;
        ju.bottomRows(n) = a_ * delta + b_ * y;
      } else {
        jz.bottomLeftCorner(n, n) = b_;
        ju.bottomRows(n) = model_.control_operator * delta;
      }
      break;
  }
}

Vec ControlOutputMap::evaluate(const ControlSignal& eps, Mat* jacobian) const {
  check_control(model_, eps);
  return affine_ ? evaluate_affine(eps, jacobian) : evaluate_general(eps, jacobian);
}

Mat ControlOutputMap::output_map() const {
  const Eigen::Index n = model_.dim();
  Mat out(model_.outputs(), 2 * n);
  if (kind_ == Kind::Difference) {
    out << model_.observer, -model_.observer;
  } else {
    out << Mat::Zero(model_.outputs(), n), model_.observer;
  }
  return out;
}

Vec ControlOutputMap::initial_stacked() const {
  const Eigen::Index n = model_.dim();
  Vec z(2 * n);
  if (kind_ == Kind::Difference) {
    z << model_.initial_state, model_.initial_state;
  } else {
    z << model_.initial_state, Vec::Zero(n);
  }
  return z;
}

// For z' = (X z + g) / h with X, g frozen over a step, one RK4 step is
// z+ = P(X) z + Q(X) g with P = I + X + X^2/2 + X^3/6 + X^4/24 and
// Q = I + X/2 + X^2/6 + X^3/24, the same discrete map as the stage form.
// Linear-in-y families use P = expm(X) to match their forward solver.
Vec ControlOutputMap::evaluate_affine(const ControlSignal& eps, Mat* jacobian) const {
  const Eigen::Index nz = f0_.rows();
  const Eigen::Index m = model_.channels();
  const int segments = eps.segments();
  const int steps = n_steps_;
  const double h = model_.horizon / steps;
  const Mat out_map = output_map();
  const Mat ident = Mat::Identity(nz, nz);
  bool control_in_matrix = false;
  for (const Mat& f : fc_) control_in_matrix = control_in_matrix || !f.isZero(0.0);
  // Linear-in-y families have g = 0 and step with the exact propagator.
  const bool exact = uses_exponential_steps(model_);

  Vec z = initial_stacked();
  Vec z_next(nz);
  std::vector<Mat> phi;
  std::vector<Mat> psi;
  if (jacobian) {
    phi.assign(static_cast<std::size_t>(segments), ident);
    psi.assign(static_cast<std::size_t>(segments), Mat::Zero(nz, m));
  }
  Mat x(nz, nz), x2(nz, nz), x3(nz, nz), p(nz, nz), q(nz, nz);
  std::vector<Mat> dp;
  Mat psi_next(nz, m);
  int k = 0;
  for (int s = 0; s < segments && k < steps; ++s) {
    int k_end = k;
    while (k_end < steps && eps.segment_index((k_end + 0.5) * h) == s) ++k_end;
    if (k_end == k) continue;
    const int count = k_end - k;
    const Vec u = eps.values().row(s).transpose();
    x = f0_;
    for (Eigen::Index c = 0; c < m; ++c) x += u(c) * fc_[static_cast<std::size_t>(c)];
    x *= h;
    const Vec g = h * (g_ * u);
    x2.noalias() = x * x;
    x3.noalias() = x2 * x;
    if (exact) {
      p = expm(x);
    } else {
      p = ident + x + x2 / 2.0 + x3 / 6.0;
      p.noalias() += (x3 * x) / 24.0;
    }
    q = ident + x / 2.0 + x2 / 6.0 + x3 / 24.0;
    const Vec qg = q * g;

    Mat psi_s;
    Mat inhom;  // column c: derivative of Q g in u_c
    if (jacobian) {
      psi_s = Mat::Zero(nz, m);
      inhom.resize(nz, m);
      dp.assign(static_cast<std::size_t>(m), Mat());
      for (Eigen::Index c = 0; c < m; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const Vec dg = h * g_.col(c);
        inhom.col(c) = q * dg;
        if (control_in_matrix && exact) {
          dp[ci] = expm_frechet(x, h * fc_[ci]);
        } else if (control_in_matrix) {
          const Mat dx = h * fc_[ci];
          const Mat dx2 = dx * x + x * dx;
          const Mat dx3 = dx * x2 + x * dx2;
          const Mat dx4 = dx * x3 + x * dx3;
          dp[ci] = dx + dx2 / 2.0 + dx3 / 6.0 + dx4 / 24.0;
          inhom.col(c) += (dx / 2.0 + dx2 / 6.0 + dx3 / 24.0) * g;
        }
      }
    }
    for (; k < k_end; ++k) {
      if (jacobian) {
        psi_next.noalias() = p * psi_s;
        psi_next += inhom;
        if (control_in_matrix) {
          for (Eigen::Index c = 0; c < m; ++c) {
            psi_next.col(c).noalias() += dp[static_cast<std::size_t>(c)] * z;
          }
        }
        psi_s.swap(psi_next);
      }
      z_next.noalias() = p * z;
      z_next += qg;
      z.swap(z_next);
      check_finite_state(z, "ControlOutputMap", k + 1);
    }
    if (jacobian) {
      const auto si = static_cast<std::size_t>(s);
      phi[si] = ident;
      Mat base = p;
      for (int e = count; e > 0; e >>= 1) {
        if (e & 1) phi[si] = phi[si] * base;
        base = base * base;
      }
      psi[si] = psi_s;
    }
  }
  if (jacobian) {
    jacobian->setZero(model_.outputs(), static_cast<Eigen::Index>(segments) * m);
    Mat lambda = out_map;
    for (int s = segments - 1; s >= 0; --s) {
      const auto i = static_cast<std::size_t>(s);
      jacobian->middleCols(static_cast<Eigen::Index>(s) * m, m) = lambda * psi[i];
      lambda = lambda * phi[i];
    }
  }
  return out_map * z;
}

Vec ControlOutputMap::evaluate_general(const ControlSignal& eps, Mat* jacobian) const {
  const Eigen::Index n = model_.dim();
  const Eigen::Index m = model_.channels();
  const int segments = eps.segments();
  const int steps = n_steps_;
  const double h = model_.horizon / steps;

  const Mat out_map = output_map();
  Vec z = initial_stacked();

  if (!jacobian) {
    auto f = [this](const Vec& zz, const Vec& u) { return stacked_rhs(zz, u); };
    for (int k = 0; k < steps; ++k) {
      z = rk4_step(f, z, step_control(eps, k, steps), h);
      check_finite_state(z, "ControlOutputMap", k + 1);
    }
    return out_map * z;
  }

  // Per segment s, Phi_s = dz_end/dz_start and Psi_s = dz_end/du_s over the
  // steps driven by that segment. The tangent block X = [Phi | Psi] obeys the
  // RK4 recursion differentiated stage by stage.
  const Eigen::Index nz = 2 * n;
  std::vector<Mat> phi(static_cast<std::size_t>(segments), Mat::Identity(nz, nz));
  std::vector<Mat> psi(static_cast<std::size_t>(segments), Mat::Zero(nz, m));
  Mat jz1, ju1, jz2, ju2, jz3, ju3, jz4, ju4;
  int k = 0;
  for (int s = 0; s < segments && k < steps; ++s) {
    Mat x = Mat::Zero(nz, nz + m);
    x.leftCols(nz).setIdentity();
    bool touched = false;
    while (k < steps) {
      const double t_mid = (k + 0.5) * h;
      if (eps.segment_index(t_mid) != s) break;
      touched = true;
      const Vec u = eps.values().row(s).transpose();
      const Vec k1 = stacked_rhs(z, u);
      stacked_jacobians(z, u, jz1, ju1);
      const Vec z2 = z + 0.5 * h * k1;
      const Vec k2 = stacked_rhs(z2, u);
      stacked_jacobians(z2, u, jz2, ju2);
      const Vec z3 = z + 0.5 * h * k2;
      const Vec k3 = stacked_rhs(z3, u);
      stacked_jacobians(z3, u, jz3, ju3);
      const Vec z4 = z + h * k3;
      const Vec k4 = stacked_rhs(z4, u);
      stacked_jacobians(z4, u, jz4, ju4);

      Mat d1 = jz1 * x;
      d1.rightCols(m) += ju1;
      Mat d2 = jz2 * (x + 0.5 * h * d1);
      d2.rightCols(m) += ju2;
      Mat d3 = jz3 * (x + 0.5 * h * d2);
      d3.rightCols(m) += ju3;
      Mat d4 = jz4 * (x + h * d3);
      d4.rightCols(m) += ju4;
      x += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      ++k;
      check_finite_state(z, "ControlOutputMap", k);
    }
    if (touched) {
      phi[static_cast<std::size_t>(s)] = x.leftCols(nz);
      psi[static_cast<std::size_t>(s)] = x.rightCols(m);
    }
  }

  jacobian->setZero(model_.outputs(), static_cast<Eigen::Index>(segments) * m);
  Mat lambda = out_map;
  for (int s = segments - 1; s >= 0; --s) {
    const auto i = static_cast<std::size_t>(s);
    jacobian->middleCols(static_cast<Eigen::Index>(s) * m, m) = lambda * psi[i];
    lambda = lambda * phi[i];
  }
  return out_map * z;
}

}  // namespace opid
