#include "opid/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace opid {

void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw DomainError(std::string(what) + ": non-finite entry");
  }
}

void require_square(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
}

double frobenius_inner(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("frobenius_inner: shape mismatch");
  }
  return (a.array() * b.array()).sum();
}

bool is_skew(const Mat& m, double tol) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  return (m + m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

namespace {

double one_norm(const Mat& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

// Pade approximant r_m(A) = q_m(A)^{-1} p_m(A), with p_m(A) = U + V and
// q_m(A) = -U + V, where U collects the odd powers and V the even ones.
template <std::size_t Size>
Mat pade_low(const Mat& a, const std::array<double, Size>& b) {
  const Eigen::Index n = a.rows();
  const Mat ident = Mat::Identity(n, n);
  const Mat a2 = a * a;
  Mat power = ident;
  Mat u_inner = Mat::Zero(n, n);
  Mat v = Mat::Zero(n, n);
  for (std::size_t k = 0; k < Size; k += 2) {
    v += b[k] * power;
    u_inner += b[k + 1] * power;
    power = power * a2;
  }
  const Mat u = a * u_inner;
  return (v - u).partialPivLu().solve(v + u);
}

Mat pade13(const Mat& a) {
  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};
  const Eigen::Index n = a.rows();
  const Mat ident = Mat::Identity(n, n);
  const Mat a2 = a * a;
  const Mat a4 = a2 * a2;
  const Mat a6 = a4 * a2;
  const Mat u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) +
                     b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  const Mat v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                b[4] * a4 + b[2] * a2 + b[0] * ident;
  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace

Mat expm(const Mat& a) {
  require_square(a, "expm");
  require_finite(a, "expm");
  const Eigen::Index n = a.rows();
  if (n == 0) return Mat(0, 0);

  const double norm = one_norm(a);
  if (norm <= 1.495585217958292e-2) {
    return pade_low(a, std::array<double, 4>{120.0, 60.0, 12.0, 1.0});
  }
  if (norm <= 2.539398330063230e-1) {
    return pade_low(a, std::array<double, 6>{30240.0, 15120.0, 3360.0, 420.0,
                                             30.0, 1.0});
  }
  if (norm <= 9.504178996162932e-1) {
    return pade_low(a, std::array<double, 8>{17297280.0, 8648640.0, 1995840.0,
                                             277200.0, 25200.0, 1512.0, 56.0,
                                             1.0});
  }
  if (norm <= 2.097847961257068) {
    return pade_low(a, std::array<double, 10>{17643225600.0, 8821612800.0,
                                              2075673600.0, 302702400.0,
                                              30270240.0, 2162160.0, 110880.0,
                                              3960.0, 90.0, 1.0});
  }
  constexpr double theta13 = 5.371920351148152;
  int squarings = 0;
  if (norm > theta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / theta13))));
  }
  Mat result = pade13(a / std::ldexp(1.0, squarings));
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

Mat expm_frechet(const Mat& a, const Mat& e) {
  require_square(a, "expm_frechet");
  if (e.rows() != a.rows() || e.cols() != a.cols()) {
    throw DimensionError("expm_frechet: direction shape differs");
  }
  const Eigen::Index n = a.rows();
  Mat block = Mat::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.topRightCorner(n, n) = e;
  block.bottomRightCorner(n, n) = a;
  return expm(block).topRightCorner(n, n);
}

Mat observability_matrix(const Mat& c, const Mat& a) {
  require_square(a, "observability_matrix");
  if (c.cols() != a.rows()) {
    throw DimensionError("observability_matrix: C has " +
                         std::to_string(c.cols()) + " columns, A is " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.rows()));
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index p = c.rows();
  Mat o(n * p, n);
  if (n == 0) return o;
  o.topRows(p) = c;
  for (Eigen::Index i = 1; i < n; ++i) {
    o.middleRows(p * i, p) = o.middleRows(p * (i - 1), p) * a;
  }
  return o;
}

Mat controllability_matrix(const Mat& a, const Mat& b) {
  require_square(a, "controllability_matrix");
  if (b.rows() != a.rows()) {
    throw DimensionError("controllability_matrix: B has " +
                         std::to_string(b.rows()) + " rows, A is " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.rows()));
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  Mat r(n, n * m);
  if (n == 0) return r;
  r.leftCols(m) = b;
  for (Eigen::Index i = 1; i < n; ++i) {
    r.middleCols(m * i, m) = a * r.middleCols(m * (i - 1), m);
  }
  return r;
}

Vec singular_values(const Mat& m) {
  require_finite(m, "singular_values");
  if (m.size() == 0) return Vec(0);
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues();
}

int numerical_rank(const Mat& m, std::optional<double> tol) {
  const Vec s = singular_values(m);
  if (s.size() == 0) return 0;
  const double threshold =
      tol ? *tol
          : static_cast<double>(std::max(m.rows(), m.cols())) *
                std::numeric_limits<double>::epsilon() * s(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > threshold) ++rank;
  }
  return rank;
}

double smallest_singular_value(const Mat& m) {
  const Vec s = singular_values(m);
  if (s.size() == 0) return 0.0;
  // Non-square inputs have min(rows, cols) singular values; a wide or tall
  // matrix is treated as having exactly that many.
  return s(s.size() - 1);
}

double spectral_norm(const Mat& m) {
  const Vec s = singular_values(m);
  return s.size() == 0 ? 0.0 : s(0);
}

Mat gramian(const Mat& a, const Mat& b, double horizon, int panels) {
  require_square(a, "gramian");
  if (b.rows() != a.rows()) throw DimensionError("gramian: B rows != A rows");
  if (!(horizon > 0.0)) throw DomainError("gramian: horizon must be positive");
  if (panels < 1) throw DomainError("gramian: panels must be >= 1");

  static constexpr std::array<double, 3> nodes = {-0.7745966692414834, 0.0,
                                                  0.7745966692414834};
  static constexpr std::array<double, 3> weights = {5.0 / 9.0, 8.0 / 9.0,
                                                    5.0 / 9.0};
  const double width = horizon / panels;
  const Mat bbt = b * b.transpose();
  Mat w = Mat::Zero(a.rows(), a.rows());
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * width;
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      const double tau = mid + 0.5 * width * nodes[q];
      const Mat e = expm(tau * a);
      w += (0.5 * width * weights[q]) * (e * bbt * e.transpose());
    }
  }
  return 0.5 * (w + w.transpose());
}

int lie_algebra_dimension(const Mat& a, const Mat& b, int max_iters,
                          double drop_tol) {
  require_square(a, "lie_algebra_dimension");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("lie_algebra_dimension: A and B differ in shape");
  }
  if (!is_skew(a) || !is_skew(b)) {
    throw DomainError("lie_algebra_dimension: inputs must be skew-symmetric");
  }
  const Eigen::Index n = a.rows();
  const int cap = static_cast<int>(n * (n - 1) / 2);
  const double scale = std::max({a.norm(), b.norm(), 1e-300});

  std::vector<Mat> basis;  // Frobenius-orthonormal
  auto try_add = [&](Mat candidate, double threshold) {
    for (int pass = 0; pass < 2; ++pass) {
      for (const Mat& q : basis) candidate -= frobenius_inner(q, candidate) * q;
    }
    const double r = candidate.norm();
    if (r > threshold) {
      basis.push_back(candidate / r);
      return true;
    }
    return false;
  };
  try_add(a, drop_tol * scale);
  try_add(b, drop_tol * scale);

  for (int iter = 0; iter < max_iters && static_cast<int>(basis.size()) < cap;
       ++iter) {
    bool grew = false;
    const std::size_t current = basis.size();
    for (std::size_t i = 0; i < current; ++i) {
      for (std::size_t j = i + 1; j < current; ++j) {
        if (static_cast<int>(basis.size()) >= cap) break;
        const Mat bracket = basis[i] * basis[j] - basis[j] * basis[i];
        grew = try_add(bracket, drop_tol) || grew;
      }
    }
    if (!grew) break;
  }
  return static_cast<int>(basis.size());
}

std::vector<Mat> frobenius_orthogonalize(const std::vector<Mat>& kept,
                                         const std::vector<Mat>& candidates,
                                         double drop_tol) {
  return frobenius_orthogonalize(kept, candidates, drop_tol, nullptr);
}

std::vector<Mat> frobenius_orthogonalize(const std::vector<Mat>& kept,
                                         const std::vector<Mat>& candidates,
                                         double drop_tol,
                                         std::vector<int>* survivors) {
  std::vector<Mat> q;
  auto project_out = [&q](Mat m) {
    for (int pass = 0; pass < 2; ++pass) {
      for (const Mat& e : q) m -= frobenius_inner(e, m) * e;
    }
    return m;
  };
  for (const Mat& k : kept) {
    const double norm = k.norm();
    if (norm == 0.0) continue;
    Mat r = project_out(k);
    if (r.norm() > drop_tol * norm) q.push_back(r / r.norm());
  }
  std::vector<Mat> out;
  if (survivors) survivors->clear();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Mat& c = candidates[i];
    if (!q.empty() && (c.rows() != q.front().rows() || c.cols() != q.front().cols())) {
      throw DimensionError("frobenius_orthogonalize: shape mismatch");
    }
    const double norm = c.norm();
    if (norm == 0.0) continue;
    Mat r = project_out(c);
    const double rn = r.norm();
    if (rn < drop_tol * norm) continue;
    q.push_back(r / rn);
    out.push_back(std::move(r));
    if (survivors) survivors->push_back(static_cast<int>(i));
  }
  return out;
}

Spectrum symmetric_spectrum(const Mat& symmetric, double threshold) {
  Spectrum s;
  if (symmetric.size() == 0) return s;
  require_square(symmetric, "symmetric_spectrum");
  require_finite(symmetric, "symmetric_spectrum");
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (symmetric + symmetric.transpose()),
                                         Eigen::EigenvaluesOnly);
  s.eigenvalues = eig.eigenvalues();
  s.lambda_min = s.eigenvalues(0);
  s.lambda_max = s.eigenvalues(s.eigenvalues.size() - 1);
  s.positive_definite = s.lambda_min > threshold * std::max(1.0, s.lambda_max);
  return s;
}

}  // namespace opid
