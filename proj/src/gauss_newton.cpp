#include "opid/gauss_newton.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace opid {

void GNProblem::validate() const {
  opid::validate(model, basis);
  if (controls.size() != data.size()) {
    throw DimensionError("GNProblem: controls and data differ in length");
  }
  for (const Vec& d : data) {
    if (d.size() != model.outputs()) {
      throw DimensionError("GNProblem: data vector length differs from observer rows");
    }
    require_finite(d, "GNProblem data");
  }
}

GNProblem make_problem(const SystemModel& model, const BasisSet& basis,
                       const std::vector<ControlSignal>& controls, const Vec& alpha_star,
                       int n_steps, Execution exec) {
  GNProblem p{model, basis, controls,
              simulate_data(model, basis, alpha_star, controls, n_steps, exec), n_steps,
              exec};
  p.validate();
  return p;
}

void residuals_and_jacobian(const GNProblem& p, const Vec& alpha, Vec& r, Mat& jac) {
  const Mat op = p.basis.combine(alpha);
  const Eigen::Index pp = p.model.outputs();
  const auto mc = static_cast<Eigen::Index>(p.controls.size());
  r.resize(mc * pp);
  jac.resize(mc * pp, p.basis.size());
  parallel_for(static_cast<int>(mc), p.exec, [&](int m) {
    const auto i = static_cast<std::size_t>(m);
    const LinearizedSolution sol =
        solve_linearized_all(p.model, op, p.basis.elements(), p.controls[i], p.n_steps);
    r.segment(m * pp, pp) = p.model.observer * sol.state - p.data[i];
    jac.middleRows(m * pp, pp) = p.model.observer * sol.sensitivities;
  });
}

Vec residuals(const GNProblem& p, const Vec& alpha) {
  const Mat op = p.basis.combine(alpha);
  const Eigen::Index pp = p.model.outputs();
  Vec r(static_cast<Eigen::Index>(p.controls.size()) * pp);
  parallel_for(static_cast<int>(p.controls.size()), p.exec, [&](int m) {
    const auto i = static_cast<std::size_t>(m);
    r.segment(m * pp, pp) =
        p.model.observer * final_state(p.model, op, p.controls[i], p.n_steps) - p.data[i];
  });
  return r;
}

Mat jacobian(const GNProblem& p, const Vec& alpha) {
  Vec r;
  Mat jac;
  residuals_and_jacobian(p, alpha, r, jac);
  return jac;
}

double cost(const GNProblem& p, const Vec& alpha) {
  return 0.5 * residuals(p, alpha).squaredNorm();
}

GNMatrix gn_matrix(const GNProblem& p, const Vec& alpha) {
  const Mat jac = jacobian(p, alpha);
  GNMatrix out;
  out.w = jac.transpose() * jac;
  out.spectrum = symmetric_spectrum(out.w);
  return out;
}

GNMatrix gn_matrix_at(const SystemModel& model, const Mat& op,
                      const std::vector<Mat>& directions,
                      const std::vector<ControlSignal>& controls, int n_steps,
                      Execution exec) {
  const auto k = static_cast<Eigen::Index>(directions.size());
  std::vector<Mat> parts(controls.size());
  parallel_for(static_cast<int>(controls.size()), exec, [&](int m) {
    const auto i = static_cast<std::size_t>(m);
    const Mat obs =
        model.observer *
        solve_linearized_all(model, op, directions, controls[i], n_steps).sensitivities;
    parts[i] = obs.transpose() * obs;
  });
  GNMatrix out;
  out.w = Mat::Zero(k, k);
  for (const Mat& part : parts) out.w += part;
  out.spectrum = symmetric_spectrum(out.w);
  return out;
}

std::string verdict_name(GNVerdict v) {
  switch (v) {
    case GNVerdict::Converged: return "converged";
    case GNVerdict::MaxIters: return "max_iters";
    case GNVerdict::SingularNormalEquations: return "singular_normal_equations";
    case GNVerdict::Diverged: return "diverged";
  }
  return "unknown";
}

GNReport gn_solve(const GNProblem& p, const Vec& alpha_init, const GNSettings& settings) {
  p.validate();
  if (alpha_init.size() != p.basis.size()) {
    throw DimensionError("gn_solve: initial vector length differs from basis size");
  }
  require_finite(alpha_init, "gn_solve initial vector");
  if (settings.max_iters < 0) throw DomainError("gn_solve: max_iters must be >= 0");

  GNReport rep;
  Vec alpha = alpha_init;
  for (int it = 0;; ++it) {
    Vec r;
    Mat jac;
    try {
      residuals_and_jacobian(p, alpha, r, jac);
    } catch (const DivergenceError& e) {
      rep.iterates.push_back(alpha);
      rep.verdict = GNVerdict::Diverged;
      rep.message = e.what();
      return rep;
    }
    const Mat w = jac.transpose() * jac;
    const Spectrum spec = symmetric_spectrum(w);
    rep.iterates.push_back(alpha);
    rep.residual_norms.push_back(r.norm());
    rep.lambda_min.push_back(spec.lambda_min);
    rep.lambda_max.push_back(spec.lambda_max);

    if (r.norm() <= settings.resid_tol) {
      rep.verdict = GNVerdict::Converged;
      rep.message = "residual norm below tolerance";
      return rep;
    }
    if (it >= settings.max_iters) {
      rep.verdict = GNVerdict::MaxIters;
      rep.message = "iteration limit reached";
      return rep;
    }
    if (!spec.positive_definite) {
      rep.verdict = GNVerdict::SingularNormalEquations;
      rep.message = "GN matrix is not positive definite at iterate " + std::to_string(it);
      return rep;
    }
    const Vec step = w.ldlt().solve(-(jac.transpose() * r));
    if (!step.allFinite()) {
      rep.verdict = GNVerdict::SingularNormalEquations;
      rep.message = "normal equations produced a non-finite step";
      return rep;
    }
    if (step.norm() <= settings.step_tol) {
      rep.verdict = GNVerdict::Converged;
      rep.message = "step norm below tolerance";
      return rep;
    }
    alpha += step;
    rep.iterations = it + 1;
  }
}

std::vector<double> contraction_ratios(const GNReport& report, const Vec& alpha_star,
                                       double radius, double floor) {
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < report.iterates.size(); ++k) {
    const double e0 = (report.iterates[k] - alpha_star).norm();
    const double e1 = (report.iterates[k + 1] - alpha_star).norm();
    if (e0 <= radius && e0 > floor && e1 > floor) out.push_back(e1 / (e0 * e0));
  }
  return out;
}

double relative_frobenius_error(const BasisSet& basis, const Vec& alpha,
                                const Vec& alpha_star) {
  const Mat ref = basis.combine(alpha_star);
  const double denom = ref.norm();
  const double num = (basis.combine(alpha) - ref).norm();
  return denom > 0.0 ? num / denom : num;
}

namespace {

// Composite weights on nodes 0..len (len intervals of width h): Simpson for
// even runs, Simpson plus a closing 3/8 panel for odd runs >= 3.
std::vector<double> run_weights(int len, double h) {
  std::vector<double> w(static_cast<std::size_t>(len) + 1, 0.0);
  if (len == 1) {
    w[0] = w[1] = 0.5 * h;
    return w;
  }
  const int simpson = (len % 2 == 0) ? len : len - 3;
  for (int i = 0; i < simpson; i += 2) {
    w[static_cast<std::size_t>(i)] += h / 3.0;
    w[static_cast<std::size_t>(i) + 1] += 4.0 * h / 3.0;
    w[static_cast<std::size_t>(i) + 2] += h / 3.0;
  }
  if (simpson != len) {
    const auto s = static_cast<std::size_t>(simpson);
    w[s] += 3.0 * h / 8.0;
    w[s + 1] += 9.0 * h / 8.0;
    w[s + 2] += 9.0 * h / 8.0;
    w[s + 3] += 3.0 * h / 8.0;
  }
  return w;
}

}  // namespace

Mat wtilde(const GNProblem& p, const Vec& alpha_star, const Vec& alpha) {
  if (p.model.family != Family::LinearDrift) {
    throw DomainError("wtilde: only defined for the linear drift family");
  }
  p.validate();
  const int k_total = p.basis.size();
  const Mat a_star = p.basis.combine(alpha_star);
  const int n = p.n_steps == 0 ? default_steps(p.model.horizon) : p.n_steps;
  const double h = p.model.horizon / n;
  const Mat step_prop = expm(h * a_star);

  std::vector<Mat> parts(p.controls.size());
  parallel_for(static_cast<int>(p.controls.size()), p.exec, [&](int m) {
    const auto i = static_cast<std::size_t>(m);
    const ControlSignal& eps = p.controls[i];
    const Trajectory traj = solve_forward(p.model, p.basis, alpha, eps, n);

    // Quadrature weights per grid node; runs follow the control segments.
    std::vector<double> weights(static_cast<std::size_t>(n) + 1, 0.0);
    int start = 0;
    while (start < n) {
      const int seg = eps.segment_index((start + 0.5) * h);
      int end = start + 1;
      while (end < n && eps.segment_index((end + 0.5) * h) == seg) ++end;
      const std::vector<double> w = run_weights(end - start, h);
      for (int j = 0; j <= end - start; ++j) {
        weights[static_cast<std::size_t>(start + j)] += w[static_cast<std::size_t>(j)];
      }
      start = end;
    }

    Mat gamma = Mat::Zero(p.model.outputs(), k_total);
    Mat prop = Mat::Identity(a_star.rows(), a_star.cols());  // exp((T - t_k) A_star)
    for (int k = n; k >= 0; --k) {
      const Mat cp = p.model.observer * prop;
      const Vec& y = traj.states[static_cast<std::size_t>(k)];
      const double wk = weights[static_cast<std::size_t>(k)];
      for (int j = 0; j < k_total; ++j) gamma.col(j) += wk * (cp * (p.basis[j] * y));
      prop = prop * step_prop;
    }
    parts[i] = gamma.transpose() * gamma;
  });
  Mat out = Mat::Zero(k_total, k_total);
  for (const Mat& part : parts) out += part;
  return out;
}

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void write_report(const GNReport& report, const std::filesystem::path& dir,
                  const std::optional<Vec>& alpha_star, const BasisSet* basis) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "gn_report.txt");
    out << "verdict " << verdict_name(report.verdict) << '\n';
    out << "message " << report.message << '\n';
    out << "iterations " << report.iterations << '\n';
    if (!report.residual_norms.empty()) {
      out << "final_residual_norm " << fmt(report.residual_norms.back()) << '\n';
      out << "final_lambda_min " << fmt(report.lambda_min.back()) << '\n';
      out << "final_lambda_max " << fmt(report.lambda_max.back()) << '\n';
    }
    if (alpha_star) {
      out << "final_error " << fmt((report.final_iterate() - *alpha_star).norm()) << '\n';
      if (basis) {
        out << "relative_frobenius_error "
            << fmt(relative_frobenius_error(*basis, report.final_iterate(), *alpha_star))
            << '\n';
      }
      const std::vector<double> ratios = contraction_ratios(report, *alpha_star);
      out << "contraction_ratios";
      for (double q : ratios) out << ' ' << fmt(q);
      out << '\n';
    }
    out << "final_alpha";
    for (Eigen::Index i = 0; i < report.final_iterate().size(); ++i) {
      out << ' ' << fmt(report.final_iterate()(i));
    }
    out << '\n';
  }
  std::ofstream csv(dir / "gn_iterates.csv");
  csv << "iteration,residual_norm,lambda_min,lambda_max";
  if (alpha_star) csv << ",error";
  for (Eigen::Index i = 0; i < report.iterates.front().size(); ++i) csv << ",alpha" << i;
  csv << '\n';
  for (std::size_t k = 0; k < report.iterates.size(); ++k) {
    csv << k;
    if (k < report.residual_norms.size()) {
      csv << ',' << fmt(report.residual_norms[k]) << ',' << fmt(report.lambda_min[k]) << ','
          << fmt(report.lambda_max[k]);
    } else {
      csv << ",,,";
    }
    if (alpha_star) csv << ',' << fmt((report.iterates[k] - *alpha_star).norm());
    for (Eigen::Index i = 0; i < report.iterates[k].size(); ++i) {
      csv << ',' << fmt(report.iterates[k](i));
    }
    csv << '\n';
  }
}

}  // namespace opid
