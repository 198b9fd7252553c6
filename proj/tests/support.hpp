#pragma once

#include <random>
#include <string>
#include <vector>

#include "opid/dynamics.hpp"
#include "opid/harness.hpp"

namespace opid::testing {

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

inline Mat skew_gaussian(int n, std::mt19937_64& rng) {
  const Mat x = gaussian(n, n, rng);
  return 0.5 * (x - x.transpose());
}

inline CMat hermitian_gaussian(int n, std::mt19937_64& rng) {
  CMat x(n, n);
  x.real() = gaussian(n, n, rng);
  x.imag() = gaussian(n, n, rng);
  return 0.5 * (x + x.adjoint());
}

inline Vec unit(int n, std::mt19937_64& rng) {
  Vec v = gaussian(n, 1, rng);
  return v / v.norm();
}

inline ControlSignal random_control(int segments, int channels, double horizon,
                                    std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat v(segments, channels);
  for (int i = 0; i < segments; ++i) {
    for (int j = 0; j < channels; ++j) v(i, j) = u(rng);
  }
  return ControlSignal(v, horizon);
}

/// A model, its basis and a true coefficient vector for one family.
struct Instance {
  std::string family;
  SystemModel model;
  std::vector<Mat> basis;
  Vec alpha;
};

inline std::vector<std::string> family_names() {
  return {"linear_drift", "linear_control_matrix", "bilinear_drift", "bilinear_control",
          "schrodinger",  "general_nonlinear"};
}

inline Instance random_instance(const std::string& family, std::mt19937_64& rng) {
  Instance in;
  in.family = family;
  const int n = 3;
  if (family == "linear_drift") {
    in.model = SystemModel::linear_drift(gaussian(n, n, rng), gaussian(2, n, rng), 1.0);
    in.basis = BasisSet::canonical(n, n).elements();
  } else if (family == "linear_control_matrix") {
    in.model = SystemModel::linear_control_matrix(gaussian(n, n, rng), 2, gaussian(2, n, rng),
                                                  unit(n, rng), 1.0);
    in.basis = BasisSet::canonical(n, 2).elements();
  } else if (family == "bilinear_drift") {
    in.model = SystemModel::bilinear_drift(skew_gaussian(n, rng), gaussian(2, n, rng),
                                           unit(n, rng), 1.0);
    in.basis = skew_canonical_basis(n);
  } else if (family == "bilinear_control") {
    in.model = SystemModel::bilinear_control(skew_gaussian(n, rng), gaussian(2, n, rng),
                                             unit(n, rng), 1.0);
    in.basis = skew_canonical_basis(n);
  } else if (family == "schrodinger") {
    CVec psi0 = CVec::Zero(n), psi1(n);
    psi0(0) = 1.0;
    psi1.real() = unit(n, rng);
    psi1.imag().setZero();
    const SchrodingerSetup s = setup_schrodinger(hermitian_gaussian(n, rng),
                                                 hermitian_canonical_basis(n), psi0, psi1, 1.0);
    in.model = s.model;
    in.basis = s.basis.elements();
  } else {
    NonlinearTerm g;
    g.value = [](const Vec& y) { return Vec(-y.array().cube() + 0.5 * y.array().sin()); };
    g.jacobian = [](const Vec& y) {
      return Mat((-3.0 * y.array().square() + 0.5 * y.array().cos()).matrix().asDiagonal());
    };
    in.model = SystemModel::general_nonlinear(g, 2, gaussian(2, n, rng), unit(n, rng), 1.0);
    in.basis = BasisSet::canonical(n, 2).elements();
  }
  in.alpha = 0.7 * gaussian(static_cast<Eigen::Index>(in.basis.size()), 1, rng);
  return in;
}

}  // namespace opid::testing
