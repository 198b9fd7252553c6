#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace opid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Both check and throw DomainError naming `what`.
void require_finite(const Mat& m, const char* what);
void require_square(const Mat& m, const char* what);

double frobenius_inner(const Mat& a, const Mat& b);
bool is_skew(const Mat& m, double tol = 1e-12);

/// Matrix exponential by scaling and squaring with a degree-13 Pade core.
/// Relative accuracy is close to unit roundoff for the small dense matrices
/// used here.
Mat expm(const Mat& a);
/// Frechet derivative of expm at `a` in direction `e`, read from the upper
/// right block of expm([[a, e], [0, a]]).
Mat expm_frechet(const Mat& a, const Mat& e);

/// Stacks C, CA, ..., CA^{N-1}.
Mat observability_matrix(const Mat& c, const Mat& a);
/// Concatenates B, AB, ..., A^{N-1}B.
Mat controllability_matrix(const Mat& a, const Mat& b);

Vec singular_values(const Mat& m);
/// Counts singular values strictly above `tol`. Without a tolerance the
/// default max(rows, cols) * eps * sigma_max is used.
int numerical_rank(const Mat& m, std::optional<double> tol = std::nullopt);
double smallest_singular_value(const Mat& m);
double spectral_norm(const Mat& m);

/// Controllability Gramian over [0, T] by composite three-point
/// Gauss-Legendre quadrature.
Mat gramian(const Mat& a, const Mat& b, double horizon, int panels = 200);

/// Dimension of Lie{A, B} inside so(N), built by repeated bracketing with
/// Gram-Schmidt in the Frobenius inner product. Stops when a full pass adds
/// nothing, when N(N-1)/2 is reached, or after `max_iters` passes.
int lie_algebra_dimension(const Mat& a, const Mat& b, int max_iters = 64,
                          double drop_tol = 1e-10);

/// Projects each candidate onto the Frobenius orthogonal complement of
/// `kept` and of the candidates accepted before it. A candidate whose
/// residual norm falls below drop_tol times its original norm is dropped.
/// Survivors are returned unnormalized, in input order.
std::vector<Mat> frobenius_orthogonalize(const std::vector<Mat>& kept,
                                         const std::vector<Mat>& candidates,
                                         double drop_tol = 1e-8);

/// Same as frobenius_orthogonalize but also reports which candidate indices
/// survived.
std::vector<Mat> frobenius_orthogonalize(const std::vector<Mat>& kept,
                                         const std::vector<Mat>& candidates,
                                         double drop_tol,
                                         std::vector<int>* survivors);

/// Extremal eigenvalues of a symmetric matrix and the scale-aware PD
/// verdict lambda_min > threshold * max(1, lambda_max).
struct Spectrum {
  Vec eigenvalues;  // ascending
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  bool positive_definite = false;
};

inline constexpr double kPdThreshold = 1e-10;

Spectrum symmetric_spectrum(const Mat& symmetric,
                            double threshold = kPdThreshold);

}  // namespace opid
