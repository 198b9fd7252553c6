#include "opid/optimizer.hpp"

#include <cmath>
#include <random>

namespace opid {

void OptimizerConfig::validate() const {
  if (multistart < 0) throw DomainError("optimizer.multistart must be >= 0");
  if (max_iters < 1) throw DomainError("optimizer.max_iters must be >= 1");
  if (!(grad_tol > 0.0)) throw DomainError("optimizer.grad_tol must be positive");
  if (!(fd_step > 0.0)) throw DomainError("optimizer.fd_step must be positive");
}

namespace {

Vec clamp(const Vec& x, const Vec& lower, const Vec& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

double projected_gradient_norm(const Vec& x, const Vec& g, const Vec& lower,
                               const Vec& upper) {
  return (clamp(x - g, lower, upper) - x).lpNorm<Eigen::Infinity>();
}

struct Evaluator {
  const Objective& f;
  bool analytic;
  double fd_step;

  double operator()(const Vec& x, Vec& g) const {
    if (analytic) {
      g.resize(x.size());
      const double v = f(x, &g);
      if (g.size() != x.size()) throw DimensionError("objective gradient has wrong size");
      return v;
    }
    const double v = f(x, nullptr);
    g.resize(x.size());
    Vec xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = fd_step * std::max(1.0, std::abs(x(i)));
      xp(i) = x(i) + h;
      const double fp = f(xp, nullptr);
      xp(i) = x(i) - h;
      const double fm = f(xp, nullptr);
      xp(i) = x(i);
      g(i) = (fp - fm) / (2.0 * h);
    }
    return v;
  }
};

}  // namespace

MinimizeResult minimize_box(const Objective& f, const Vec& lower, const Vec& upper,
                            const Vec& x0, const OptimizerConfig& cfg,
                            bool analytic_gradient) {
  cfg.validate();
  const Eigen::Index n = x0.size();
  if (lower.size() != n || upper.size() != n) {
    throw DimensionError("minimize_box: bounds and start differ in length");
  }
  if ((lower.array() > upper.array()).any()) {
    throw DomainError("minimize_box: lower bound exceeds upper bound");
  }
  const Evaluator eval{f, analytic_gradient, cfg.fd_step};

  MinimizeResult r;
  r.x = clamp(x0, lower, upper);
  Vec g;
  r.value = eval(r.x, g);
  if (!std::isfinite(r.value)) throw DomainError("minimize_box: non-finite start value");
  Mat h_inv = Mat::Identity(n, n);
  bool fresh = true;

  for (int it = 0; it < cfg.max_iters; ++it) {
    if (projected_gradient_norm(r.x, g, lower, upper) <=
        cfg.grad_tol * std::max(1.0, std::abs(r.value))) {
      r.converged = true;
      return r;
    }
    // Freeze variables pinned at a bound with the gradient pushing outward.
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lower = r.x(i) <= lower(i) && g(i) > 0.0;
      const bool at_upper = r.x(i) >= upper(i) && g(i) < 0.0;
      if (!at_lower && !at_upper) free.push_back(i);
    }
    auto direction = [&](const Mat& hm) {
      Vec d = Vec::Zero(n);
      for (std::size_t a = 0; a < free.size(); ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < free.size(); ++b) acc += hm(free[a], free[b]) * g(free[b]);
        d(free[a]) = -acc;
      }
      return d;
    };
    Vec d = direction(h_inv);
    if (g.dot(d) >= 0.0) {
      h_inv.setIdentity();
      fresh = true;
      d = direction(h_inv);
    }
    if (fresh) d /= std::max(1.0, d.lpNorm<Eigen::Infinity>());

    double step = 1.0;
    bool accepted = false;
    Vec x_new;
    double v_new = 0.0;
    Vec g_new;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = clamp(r.x + step * d, lower, upper);
      const Vec s = x_new - r.x;
      if (s.lpNorm<Eigen::Infinity>() == 0.0) break;
      v_new = eval(x_new, g_new);
      if (std::isfinite(v_new) && v_new <= r.value + 1e-4 * g.dot(s)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    r.iterations = it + 1;
    if (!accepted) {
      if (!fresh) {
        h_inv.setIdentity();
        fresh = true;
        continue;
      }
      r.line_search_failed = true;
      return r;
    }

    const Vec s = x_new - r.x;
    const Vec y = g_new - g;
    const double decrease = r.value - v_new;
    r.x = std::move(x_new);
    r.value = v_new;
    g = std::move(g_new);

    const double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm() && sy > 0.0) {
      if (fresh) {
        h_inv *= sy / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Vec hy = h_inv * y;
      h_inv += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
               rho * (hy * s.transpose() + s * hy.transpose());
    }
    if (decrease <= 1e-16 * std::max(1.0, std::abs(r.value)) &&
        s.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, r.x.lpNorm<Eigen::Infinity>())) {
      r.converged = true;
      return r;
    }
  }
  r.converged = projected_gradient_norm(r.x, g, lower, upper) <=
                cfg.grad_tol * std::max(1.0, std::abs(r.value));
  return r;
}

MinimizeResult minimize_multistart(const Objective& f, const Vec& lower,
                                   const Vec& upper, const std::vector<Vec>& starts,
                                   const OptimizerConfig& cfg, bool analytic_gradient,
                                   std::vector<MinimizeResult>* all) {
  if (starts.empty()) throw DomainError("minimize_multistart: no starting points");
  std::vector<MinimizeResult> runs(starts.size());
  parallel_for(static_cast<int>(starts.size()), cfg.exec, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    runs[k] = minimize_box(f, lower, upper, starts[k], cfg, analytic_gradient);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].value < runs[best].value) best = i;
  }
  MinimizeResult out = runs[best];
  if (all) *all = std::move(runs);
  return out;
}

std::vector<ControlSignal> control_starts(const AdmissibleBox& box, int segments,
                                          double horizon, const OptimizerConfig& cfg) {
  if (segments < 1) throw DomainError("control segments must be >= 1");
  std::vector<ControlSignal> starts;
  starts.push_back(ControlSignal::zero(box.channels(), horizon, segments));
  starts.push_back(ControlSignal::constant(box.upper(), horizon, segments));
  starts.push_back(ControlSignal::constant(box.lower(), horizon, segments));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < cfg.multistart; ++k) {
    Mat v(segments, box.channels());
    for (int s = 0; s < segments; ++s) {
      for (int c = 0; c < box.channels(); ++c) {
        v(s, c) = box.lower()(c) + unit(rng) * (box.upper()(c) - box.lower()(c));
      }
    }
    starts.emplace_back(std::move(v), horizon);
  }
  return starts;
}

namespace {

Vec flatten(const Mat& v) {
  Vec x(v.size());
  for (Eigen::Index s = 0; s < v.rows(); ++s) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) x(s * v.cols() + c) = v(s, c);
  }
  return x;
}

Mat unflatten(const Vec& x, Eigen::Index rows, Eigen::Index cols) {
  Mat v(rows, cols);
  for (Eigen::Index s = 0; s < rows; ++s) {
    for (Eigen::Index c = 0; c < cols; ++c) v(s, c) = x(s * cols + c);
  }
  return v;
}

}  // namespace

ControlMaximum maximize_over_controls(const ControlObjective& objective,
                                      const AdmissibleBox& box, int segments,
                                      double horizon, const OptimizerConfig& cfg,
                                      bool analytic_gradient) {
  const Eigen::Index m = box.channels();
  const std::vector<ControlSignal> signals = control_starts(box, segments, horizon, cfg);
  std::vector<Vec> starts;
  for (const ControlSignal& s : signals) starts.push_back(flatten(s.values()));
  Vec lower(segments * m);
  Vec upper(segments * m);
  for (int s = 0; s < segments; ++s) {
    lower.segment(s * m, m) = box.lower();
    upper.segment(s * m, m) = box.upper();
  }

  const Objective negated = [&](const Vec& x, Vec* grad) {
    const ControlSignal eps(unflatten(x, segments, m), horizon);
    if (!grad) return -objective(eps, nullptr);
    Mat g;
    const double v = objective(eps, &g);
    if (g.rows() != segments || g.cols() != m) {
      throw DimensionError("control objective gradient has wrong shape");
    }
    *grad = -flatten(g);
    return -v;
  };

  std::vector<MinimizeResult> runs;
  const MinimizeResult best =
      minimize_multistart(negated, lower, upper, starts, cfg, analytic_gradient, &runs);
  ControlMaximum out{ControlSignal(unflatten(best.x, segments, m), horizon), -best.value,
                     false, {}};
  bool any_ok = false;
  for (const MinimizeResult& r : runs) {
    out.start_values.push_back(-r.value);
    any_ok = any_ok || r.converged || !r.line_search_failed;
  }
  out.flagged = !any_ok;
  return out;
}

}  // namespace opid
