#include "opid/greedy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace opid {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::LGR: return "LGR";
    case Algorithm::GR: return "GR";
    case Algorithm::OGR: return "OGR";
    case Algorithm::OLGR: return "OLGR";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "LGR" || name == "lgr") return Algorithm::LGR;
  if (name == "GR" || name == "gr") return Algorithm::GR;
  if (name == "OGR" || name == "ogr") return Algorithm::OGR;
  if (name == "OLGR" || name == "olgr") return Algorithm::OLGR;
  throw DomainError("unknown algorithm '" + name + "'");
}

AdmissibleBox GreedySettings::resolve_box(int channels) const {
  if (box) {
    if (box->channels() != channels) {
      throw DimensionError("admissible box has " + std::to_string(box->channels()) +
                           " channels, model has " + std::to_string(channels));
    }
    return *box;
  }
  return AdmissibleBox::symmetric(channels, bound);
}

WMatrix build_W(const SystemModel& model, const Mat& op_lin,
                const std::vector<Mat>& directions, const ControlSignal& eps,
                int n_steps) {
  const LinearizedSolution sol =
      solve_linearized_all(model, op_lin, directions, eps, n_steps);
  WMatrix out;
  out.observed = model.observer * sol.sensitivities;
  out.w = out.observed.transpose() * out.observed;
  return out;
}

WMatrix build_W(const SystemModel& model, const BasisSet& basis, const Vec& alpha_circ,
                const ControlSignal& eps, int n_steps) {
  return build_W(model, basis.combine(alpha_circ), basis.elements(), eps, n_steps);
}

std::optional<Vec> fitting_closed_form(const Mat& w_hat_k) {
  require_square(w_hat_k, "fitting_closed_form");
  const Eigen::Index k = w_hat_k.rows() - 1;
  if (k < 0) throw DimensionError("fitting_closed_form: empty matrix");
  if (k == 0) return Vec(0);
  const Mat g = w_hat_k.topLeftCorner(k, k);
  const Spectrum s = symmetric_spectrum(g, 1e-12);
  if (!(s.lambda_min > 1e-12 * s.lambda_max) || !(s.lambda_max > 0.0)) {
    return std::nullopt;
  }
  return Vec(g.llt().solve(w_hat_k.col(k).head(k)));
}

Vec kernel_vector(const Vec& beta) {
  Vec v(beta.size() + 1);
  v << beta, -1.0;
  return v;
}

namespace {

std::uint64_t derive_seed(std::uint64_t base, int step, int index) {
  return base + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(step + 1) +
         static_cast<std::uint64_t>(index) * 0xBF58476D1CE4E5B9ULL;
}

/// Maximizes ||map(eps)||^2 over admissible controls.
ControlMaximum maximize_output(const ControlOutputMap& map, const AdmissibleBox& box,
                               double horizon, const GreedySettings& settings,
                               std::uint64_t seed) {
  OptimizerConfig cfg = settings.opt;
  cfg.seed = seed;
  const int m = box.channels();
  const ControlObjective objective = [&](const ControlSignal& eps, Mat* grad) {
    if (!grad) return map.evaluate(eps).squaredNorm();
    Mat jac;
    const Vec r = map.evaluate(eps, &jac);
    const Vec g = 2.0 * jac.transpose() * r;
    grad->resize(eps.segments(), m);
    for (int s = 0; s < eps.segments(); ++s) {
      for (int c = 0; c < m; ++c) (*grad)(s, c) = g(s * m + c);
    }
    return r.squaredNorm();
  };
  return maximize_over_controls(objective, box, settings.segments, horizon, cfg);
}

Mat combine(const std::vector<Mat>& elements, const Vec& beta, Eigen::Index rows,
            Eigen::Index cols) {
  Mat out = Mat::Zero(rows, cols);
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    out += beta(j) * elements[static_cast<std::size_t>(j)];
  }
  return out;
}

Vec least_squares_fit(const Mat& g, const Vec& b) {
  if (g.size() == 0) return Vec(0);
  return g.completeOrthogonalDecomposition().solve(b);
}

/// Nonlinear fitting: sum_m ||C y(shift + sum beta_j D_j, eps_m) - target_m||^2.
struct NonlinearFit {
  const SystemModel& model;
  Mat shift;
  std::vector<Mat> directions;
  const std::vector<ControlSignal>& controls;
  std::vector<Vec> targets;
  int n_steps;
  Execution exec;

  double operator()(const Vec& beta, Vec* grad) const {
    const Mat op = shift + combine(directions, beta, shift.rows(), shift.cols());
    const std::size_t nc = controls.size();
    std::vector<double> values(nc, 0.0);
    std::vector<Vec> grads(nc);
    parallel_for(static_cast<int>(nc), exec, [&](int i) {
      const auto m = static_cast<std::size_t>(i);
      if (grad) {
        const LinearizedSolution sol =
            solve_linearized_all(model, op, directions, controls[m], n_steps);
        const Vec r = model.observer * sol.state - targets[m];
        values[m] = r.squaredNorm();
        grads[m] = 2.0 * (model.observer * sol.sensitivities).transpose() * r;
      } else {
        const Vec r =
            model.observer * final_state(model, op, controls[m], n_steps) - targets[m];
        values[m] = r.squaredNorm();
      }
    });
    double v = 0.0;
    for (double x : values) v += x;
    if (grad) {
      *grad = Vec::Zero(beta.size());
      for (const Vec& g : grads) *grad += g;
    }
    return v;
  }
};

struct FitResult {
  Vec beta;
  double value = 0.0;
  std::vector<Vec> alternatives;
};

FitResult minimize_fit(const NonlinearFit& fit, const Vec& linear_guess,
                       const GreedySettings& settings, std::uint64_t seed) {
  const auto k = static_cast<Eigen::Index>(fit.directions.size());
  const double r = settings.compact_radius;
  const Vec lower = Vec::Constant(k, -r);
  const Vec upper = Vec::Constant(k, r);
  std::vector<Vec> starts;
  starts.push_back(Vec::Zero(k));
  if (linear_guess.size() == k && linear_guess.allFinite()) {
    starts.push_back(linear_guess.cwiseMax(lower).cwiseMin(upper));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec center = starts.back();
  for (int i = 0; i < settings.opt.multistart; ++i) {
    Vec x(k);
    for (Eigen::Index j = 0; j < k; ++j) x(j) = unit(rng);
    starts.push_back((center + x).cwiseMax(lower).cwiseMin(upper));
  }
  OptimizerConfig cfg = settings.opt;
  cfg.seed = seed;
  std::vector<MinimizeResult> runs;
  const Objective f = [&fit](const Vec& b, Vec* g) { return fit(b, g); };
  const MinimizeResult best = minimize_multistart(f, lower, upper, starts, cfg, true, &runs);
  FitResult out{best.x, best.value, {}};
  const double near = 1e-8 * std::max(1.0, std::abs(best.value));
  for (const MinimizeResult& run : runs) {
    if (std::abs(run.value - best.value) > near) continue;
    if ((run.x - best.x).norm() <= 1e-4 * std::max(1.0, best.x.norm())) continue;
    bool seen = false;
    for (const Vec& a : out.alternatives) seen = seen || (a - run.x).norm() <= 1e-4;
    if (!seen) out.alternatives.push_back(run.x);
  }
  return out;
}

double splitting_threshold(const GreedySettings& settings, const Mat& w_hat) {
  double lmax = 0.0;
  if (w_hat.size() > 0) lmax = symmetric_spectrum(w_hat).lambda_max;
  return settings.positivity_tol * std::max(1.0, lmax);
}

Vec leading_spectrum(const Mat& w, Eigen::Index k) {
  return symmetric_spectrum(w.topLeftCorner(k, k)).eigenvalues;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

}  // namespace

GreedyOutcome lgr(const SystemModel& model, const BasisSet& basis,
                  const Vec& alpha_circ, const GreedySettings& settings) {
  validate(model, basis);
  const AdmissibleBox box = settings.resolve_box(model.channels());
  const int n_steps = settings.n_steps;
  const Mat op_circ = basis.combine(alpha_circ);
  const int k_total = basis.size();

  GreedyOutcome out;
  out.algorithm = Algorithm::LGR;
  for (int j = 0; j < k_total; ++j) {
    out.order.push_back(j);
    out.selected.push_back(basis[j]);
  }

  const ControlMaximum init = maximize_output(
      ControlOutputMap::linearized(model, op_circ, basis[0], n_steps), box,
      model.horizon, settings, derive_seed(settings.opt.seed, 0, 0));
  out.controls.push_back(init.control);
  Mat w_hat = build_W(model, op_circ, basis.elements(), init.control, n_steps).w;
  {
    IterationLog entry;
    entry.iteration = 1;
    entry.step = "init";
    entry.selected = 0;
    entry.splitting_value = init.value;
    entry.spectrum = leading_spectrum(w_hat, 1);
    if (init.value <= splitting_threshold(settings, Mat())) {
      entry.warning = true;
      out.warnings.push_back("initialization value " + format_double(init.value) +
                             " is not positive");
    }
    out.log.push_back(std::move(entry));
  }

  for (int k = 1; k < k_total; ++k) {
    IterationLog entry;
    entry.iteration = k + 1;
    entry.step = "split";
    entry.selected = k;
    const Mat block = w_hat.topLeftCorner(k + 1, k + 1);
    std::optional<Vec> beta = fitting_closed_form(block);
    if (!beta) {
      out.warnings.push_back("iteration " + std::to_string(k + 1) +
                             ": fitting matrix is singular, using least squares");
      beta = least_squares_fit(block.topLeftCorner(k, k), block.col(k).head(k));
      entry.warning = true;
    }
    entry.beta = *beta;
    const Vec v = kernel_vector(*beta);
    entry.fitting_value = std::max(0.0, v.dot(block * v));

    const Mat direction =
        combine(basis.elements(), *beta, basis.rows(), basis.cols()) - basis[k];
    const ControlMaximum split = maximize_output(
        ControlOutputMap::linearized(model, op_circ, direction, n_steps), box,
        model.horizon, settings, derive_seed(settings.opt.seed, k, 0));
    entry.splitting_value = split.value;
    if (split.value <= splitting_threshold(settings, w_hat)) {
      entry.warning = true;
      out.warnings.push_back("iteration " + std::to_string(k + 1) +
                             ": splitting value " + format_double(split.value) +
                             " is not positive");
    }
    out.controls.push_back(split.control);
    w_hat += build_W(model, op_circ, basis.elements(), split.control, n_steps).w;
    entry.spectrum = leading_spectrum(w_hat, k + 1);
    out.log.push_back(std::move(entry));
  }
  out.w_hat = w_hat;
  out.spectrum = symmetric_spectrum(w_hat);
  if (!out.spectrum.positive_definite) {
    out.warnings.push_back("final GN matrix is not positive definite");
  }
  return out;
}

GreedyOutcome gr(const SystemModel& model, const BasisSet& basis,
                 const Vec& alpha_circ, const GreedySettings& settings) {
  validate(model, basis);
  const AdmissibleBox box = settings.resolve_box(model.channels());
  const int n_steps = settings.n_steps;
  const Mat op_circ = basis.combine(alpha_circ);
  const int k_total = basis.size();

  GreedyOutcome out;
  out.algorithm = Algorithm::GR;
  for (int j = 0; j < k_total; ++j) {
    out.order.push_back(j);
    out.selected.push_back(basis[j]);
  }

  const ControlMaximum init = maximize_output(
      ControlOutputMap::difference(model, op_circ, op_circ + basis[0], n_steps), box,
      model.horizon, settings, derive_seed(settings.opt.seed, 0, 0));
  out.controls.push_back(init.control);
  Mat w_lin = build_W(model, op_circ, basis.elements(), init.control, n_steps).w;
  {
    IterationLog entry;
    entry.iteration = 1;
    entry.step = "init";
    entry.selected = 0;
    entry.splitting_value = init.value;
    entry.spectrum = leading_spectrum(w_lin, 1);
    if (init.value <= splitting_threshold(settings, Mat())) {
      entry.warning = true;
      out.warnings.push_back("initialization value " + format_double(init.value) +
                             " is not positive");
    }
    out.log.push_back(std::move(entry));
  }

  for (int k = 1; k < k_total; ++k) {
    IterationLog entry;
    entry.iteration = k + 1;
    entry.step = "split";
    entry.selected = k;

    const Mat target_op = op_circ + basis[k];
    std::vector<Vec> targets(out.controls.size());
    parallel_for(static_cast<int>(out.controls.size()), settings.opt.exec, [&](int i) {
      const auto m = static_cast<std::size_t>(i);
      targets[m] = model.observer * final_state(model, target_op, out.controls[m], n_steps);
    });
    const std::vector<Mat> heads(basis.elements().begin(), basis.elements().begin() + k);
    const NonlinearFit fit{model, op_circ, heads, out.controls, targets, n_steps,
                           settings.opt.exec};
    const Mat block = w_lin.topLeftCorner(k + 1, k + 1);
    const Vec linear_guess = least_squares_fit(block.topLeftCorner(k, k), block.col(k).head(k));
    const FitResult fitted =
        minimize_fit(fit, linear_guess, settings, derive_seed(settings.opt.seed, k, 1));
    entry.beta = fitted.beta;
    entry.fitting_value = fitted.value;
    entry.alternative_minimizers = fitted.alternatives;

    const Mat fitted_op = op_circ + combine(heads, fitted.beta, basis.rows(), basis.cols());
    const Mat lin_direction =
        combine(heads, fitted.beta, basis.rows(), basis.cols()) - basis[k];
    const ControlOutputMap split_map =
        ControlOutputMap::difference(model, fitted_op, target_op, n_steps);
    const ControlOutputMap check_map =
        ControlOutputMap::linearized(model, op_circ, lin_direction, n_steps);
    const double threshold = splitting_threshold(settings, w_lin);

    ControlMaximum split = maximize_output(split_map, box, model.horizon, settings,
                                           derive_seed(settings.opt.seed, k, 0));
    double lin_value = check_map.evaluate(split.control).squaredNorm();
    int retries = 0;
    while (!(lin_value > threshold) && retries < settings.max_split_retries) {
      ++retries;
      ControlMaximum again =
          maximize_output(split_map, box, model.horizon, settings,
                          derive_seed(settings.opt.seed + 7919ULL * retries, k, retries));
      const double again_lin = check_map.evaluate(again.control).squaredNorm();
      if (again_lin > lin_value) {
        split = std::move(again);
        lin_value = again_lin;
      }
    }
    entry.retries = retries;
    entry.splitting_value = split.value;
    if (!(lin_value > threshold) || split.value <= threshold) {
      entry.warning = true;
      out.warnings.push_back("iteration " + std::to_string(k + 1) +
                             ": splitting control does not separate the linearized "
                             "states (value " + format_double(lin_value) + ")");
    }
    out.controls.push_back(split.control);
    w_lin += build_W(model, op_circ, basis.elements(), split.control, n_steps).w;
    entry.spectrum = leading_spectrum(w_lin, k + 1);
    out.log.push_back(std::move(entry));
  }
  out.w_hat = w_lin;
  out.spectrum = symmetric_spectrum(w_lin);
  if (!out.spectrum.positive_definite) {
    out.warnings.push_back("final linearized GN matrix is not positive definite");
  }
  return out;
}

namespace {

struct Candidate {
  Mat op;
  int index;
};

Mat selected_w_hat(const SystemModel& model, const Mat& shift, const std::vector<Mat>& sel,
                   const std::vector<ControlSignal>& controls, int n_steps, Execution exec) {
  const auto k = static_cast<Eigen::Index>(sel.size());
  std::vector<Mat> parts(controls.size());
  parallel_for(static_cast<int>(controls.size()), exec, [&](int i) {
    const auto m = static_cast<std::size_t>(i);
    parts[m] = build_W(model, shift, sel, controls[m], n_steps).w;
  });
  Mat w = Mat::Zero(k, k);
  for (const Mat& p : parts) w += p;
  return w;
}

}  // namespace

GreedyOutcome ogr(const SystemModel& model, const std::vector<Mat>& candidates,
                  const Mat& shift_in, const GreedySettings& settings, bool linearized) {
  validate(model);
  if (!(settings.tol1 > 0.0) || !(settings.tol2 > 0.0)) {
    throw DomainError("ogr: tol1 and tol2 must be positive");
  }
  if (candidates.empty()) throw DomainError("ogr: empty candidate set");
  const Eigen::Index rows = model.operator_rows();
  const Eigen::Index cols = model.operator_cols();
  for (const Mat& c : candidates) validate_operator(model, c, "OGR candidate");
  const Mat shift = shift_in.size() == 0 ? Mat(Mat::Zero(rows, cols)) : shift_in;
  validate_operator(model, shift, "OGR shift");
  const AdmissibleBox box = settings.resolve_box(model.channels());
  const int n_steps = settings.n_steps;
  const Execution exec = settings.opt.exec;

  GreedyOutcome out;
  out.algorithm = linearized ? Algorithm::OLGR : Algorithm::OGR;

  std::vector<Candidate> remaining;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].norm() > 0.0) remaining.push_back({candidates[i], static_cast<int>(i)});
  }
  if (remaining.empty()) throw DomainError("ogr: every candidate is zero");

  auto output_map = [&](const Mat& fitted, const Mat& target) {
    if (linearized) return ControlOutputMap::linearized(model, shift, fitted - target, n_steps);
    return ControlOutputMap::difference(model, shift + fitted, shift + target, n_steps);
  };

  // Joint initialization over every candidate.
  std::vector<ControlMaximum> inits;
  {
    std::vector<std::optional<ControlMaximum>> tmp(remaining.size());
    parallel_for(static_cast<int>(remaining.size()), exec, [&](int i) {
      const auto l = static_cast<std::size_t>(i);
      tmp[l] = maximize_output(output_map(Mat::Zero(rows, cols), remaining[l].op), box,
                               model.horizon, settings,
                               derive_seed(settings.opt.seed, 0, remaining[l].index));
    });
    for (auto& t : tmp) inits.push_back(std::move(*t));
  }
  std::size_t first = 0;
  for (std::size_t l = 1; l < inits.size(); ++l) {
    if (inits[l].value > inits[first].value) first = l;
  }
  out.controls.push_back(inits[first].control);
  out.selected.push_back(remaining[first].op);
  out.order.push_back(remaining[first].index);
  remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(first));
  double guard = inits[first].value;
  {
    IterationLog entry;
    entry.iteration = 1;
    entry.step = "init";
    entry.selected = out.order.back();
    entry.splitting_value = guard;
    entry.spectrum =
        symmetric_spectrum(selected_w_hat(model, shift, out.selected, out.controls,
                                          n_steps, exec))
            .eigenvalues;
    out.log.push_back(std::move(entry));
  }

  while (!remaining.empty() && guard > settings.tol1) {
    const int k = static_cast<int>(out.selected.size());
    {
      std::vector<Mat> ops;
      for (const Candidate& c : remaining) ops.push_back(c.op);
      std::vector<int> survivors;
      const std::vector<Mat> ortho =
          frobenius_orthogonalize(out.selected, ops, 1e-8, &survivors);
      std::vector<Candidate> next;
      for (std::size_t i = 0; i < ortho.size(); ++i) {
        next.push_back({ortho[i], remaining[static_cast<std::size_t>(survivors[i])].index});
      }
      remaining = std::move(next);
    }
    if (remaining.empty()) break;

    // Linearized observations of selected and remaining elements.
    std::vector<Mat> all_dirs = out.selected;
    for (const Candidate& c : remaining) all_dirs.push_back(c.op);
    const auto n_all = static_cast<Eigen::Index>(all_dirs.size());
    Mat w_all = Mat::Zero(n_all, n_all);
    for (const ControlSignal& eps : out.controls) {
      w_all += build_W(model, shift, all_dirs, eps, n_steps).w;
    }
    const Mat g = w_all.topLeftCorner(k, k);

    std::vector<Vec> betas(remaining.size());
    std::vector<double> f(remaining.size(), 0.0);
    std::vector<std::vector<Vec>> alternatives(remaining.size());
    parallel_for(static_cast<int>(remaining.size()), exec, [&](int i) {
      const auto l = static_cast<std::size_t>(i);
      const Eigen::Index col = k + i;
      const Vec b = w_all.col(col).head(k);
      const Vec lin_beta = least_squares_fit(g, b);
      if (linearized) {
        betas[l] = lin_beta;
        f[l] = std::max(0.0, w_all(col, col) - 2.0 * b.dot(lin_beta) +
                                 lin_beta.dot(g * lin_beta));
        return;
      }
      std::vector<Vec> targets(out.controls.size());
      for (std::size_t m = 0; m < out.controls.size(); ++m) {
        targets[m] = model.observer *
                     final_state(model, shift + remaining[l].op, out.controls[m], n_steps);
      }
      const NonlinearFit fit{model, shift, out.selected, out.controls, targets, n_steps,
                             Execution::Serial};
      const FitResult fitted = minimize_fit(
          fit, lin_beta, settings, derive_seed(settings.opt.seed, k, 1000 + remaining[l].index));
      betas[l] = fitted.beta;
      f[l] = fitted.value;
      alternatives[l] = fitted.alternatives;
    });

    std::size_t best = 0;
    for (std::size_t l = 1; l < f.size(); ++l) {
      if (f[l] > f[best]) best = l;
    }

    IterationLog entry;
    entry.iteration = k + 1;
    if (f[best] > settings.tol2) {
      entry.step = "skip";
      entry.fitting_value = f[best];
      guard = f[best];
    } else {
      entry.step = "split";
      std::vector<std::optional<ControlMaximum>> splits(remaining.size());
      parallel_for(static_cast<int>(remaining.size()), exec, [&](int i) {
        const auto l = static_cast<std::size_t>(i);
        const Mat fitted = combine(out.selected, betas[l], rows, cols);
        splits[l] = maximize_output(output_map(fitted, remaining[l].op), box, model.horizon,
                                    settings, derive_seed(settings.opt.seed, k, remaining[l].index));
      });
      best = 0;
      for (std::size_t l = 1; l < splits.size(); ++l) {
        if (splits[l]->value > splits[best]->value) best = l;
      }
      entry.fitting_value = f[best];
      entry.splitting_value = splits[best]->value;
      guard = splits[best]->value;
      out.controls.push_back(splits[best]->control);
      if (guard <= settings.tol1) {
        entry.warning = true;
        out.warnings.push_back("iteration " + std::to_string(k + 1) +
                               ": extended splitting value " + format_double(guard) +
                               " is below tol1");
      }
    }
    entry.selected = remaining[best].index;
    entry.beta = betas[best];
    entry.alternative_minimizers = alternatives[best];
    out.selected.push_back(remaining[best].op);
    out.order.push_back(remaining[best].index);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    entry.spectrum = symmetric_spectrum(selected_w_hat(model, shift, out.selected,
                                                       out.controls, n_steps, exec))
                         .eigenvalues;
    out.log.push_back(std::move(entry));
  }

  out.w_hat = selected_w_hat(model, shift, out.selected, out.controls, n_steps, exec);
  out.spectrum = symmetric_spectrum(out.w_hat);
  if (!out.spectrum.positive_definite) {
    out.warnings.push_back("GN matrix on the selected elements is not positive definite");
  }
  return out;
}

GreedyOutcome run_greedy(Algorithm algorithm, const SystemModel& model,
                         const std::vector<Mat>& elements, const Vec& alpha_circ,
                         const GreedySettings& settings) {
  switch (algorithm) {
    case Algorithm::LGR:
    case Algorithm::GR: {
      const BasisSet basis(elements, alpha_circ);
      return algorithm == Algorithm::LGR ? lgr(model, basis, basis.shift(), settings)
                                         : gr(model, basis, basis.shift(), settings);
    }
    case Algorithm::OGR:
    case Algorithm::OLGR: {
      Mat shift = Mat::Zero(model.operator_rows(), model.operator_cols());
      if (alpha_circ.size() != 0) {
        if (alpha_circ.size() != static_cast<Eigen::Index>(elements.size())) {
          throw DimensionError("alpha_circ length differs from the candidate count");
        }
        for (std::size_t j = 0; j < elements.size(); ++j) {
          shift += alpha_circ(static_cast<Eigen::Index>(j)) * elements[j];
        }
      }
      return ogr(model, elements, shift, settings, algorithm == Algorithm::OLGR);
    }
  }
  throw DomainError("unknown algorithm");
}

namespace {

std::string vec_text(const Vec& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v(i));
  }
  return s + "]";
}

std::string control_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "control_%02zu.csv", i + 1);
  return buf;
}

}  // namespace

void write_outcome(const GreedyOutcome& outcome, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "controls");
  for (const auto& entry : fs::directory_iterator(dir / "controls")) {
    if (entry.path().extension() == ".csv") fs::remove(entry.path());
  }
  for (std::size_t i = 0; i < outcome.controls.size(); ++i) {
    write_control_csv(outcome.controls[i], dir / "controls" / control_name(i));
  }

  {
    std::ofstream order(dir / "basis_order.txt");
    for (int idx : outcome.order) order << idx << '\n';
  }
  {
    nlohmann::json j;
    j["algorithm"] = algorithm_name(outcome.algorithm);
    j["order"] = outcome.order;
    nlohmann::json elems = nlohmann::json::array();
    for (const Mat& m : outcome.selected) {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
      }
      elems.push_back(rows);
    }
    j["elements"] = elems;
    std::ofstream f(dir / "selected_basis.json");
    f << j.dump(2) << '\n';
  }
  {
    std::ofstream log(dir / "greedy_log.txt");
    log << "algorithm " << algorithm_name(outcome.algorithm) << '\n';
    log << "controls " << outcome.controls.size() << '\n';
    for (const IterationLog& e : outcome.log) {
      log << "iteration " << e.iteration << " step " << e.step << " selected "
          << e.selected << '\n';
      log << "  beta " << vec_text(e.beta) << '\n';
      log << "  fitting_value " << format_double(e.fitting_value) << '\n';
      log << "  splitting_value " << format_double(e.splitting_value) << '\n';
      log << "  spectrum " << vec_text(e.spectrum) << '\n';
      if (e.retries) log << "  retries " << e.retries << '\n';
      for (const Vec& a : e.alternative_minimizers) {
        log << "  alternative_minimizer " << vec_text(a) << '\n';
      }
      if (e.warning) log << "  warning\n";
    }
    log << "final lambda_min " << format_double(outcome.spectrum.lambda_min) << '\n';
    log << "final lambda_max " << format_double(outcome.spectrum.lambda_max) << '\n';
    log << "final positive_definite " << (outcome.spectrum.positive_definite ? 1 : 0)
        << '\n';
    for (const std::string& w : outcome.warnings) log << "warning " << w << '\n';
  }
}

std::vector<ControlSignal> read_controls_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path controls = fs::exists(dir / "controls") ? dir / "controls" : dir;
  if (!fs::is_directory(controls)) {
    throw std::runtime_error("controls directory not found: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(controls)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no control CSV files in " + controls.string());
  std::vector<ControlSignal> out;
  for (const fs::path& p : files) out.push_back(read_control_csv(p));
  return out;
}

}  // namespace opid
