#include "opid/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace opid {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string short_fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

bool independent(const std::vector<Mat>& elements) {
  const Eigen::Index size = elements.front().size();
  Mat stacked(size, static_cast<Eigen::Index>(elements.size()));
  for (std::size_t j = 0; j < elements.size(); ++j) {
    stacked.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Vec>(elements[j].data(), size);
  }
  return numerical_rank(stacked) == static_cast<int>(elements.size());
}

bool drift_hypotheses(const Mat& a, const Mat& b, const Mat& c) {
  const int n = static_cast<int>(a.rows());
  return numerical_rank(observability_matrix(c, a)) == n &&
         numerical_rank(controllability_matrix(a, b)) == n;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

const char* kPlotScript = R"(import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent
radii, percentages = [], []
with open(here / "sweep.csv", newline="") as f:
    for row in csv.DictReader(f):
        radii.append(float(row["radius"]))
        percentages.append(float(row["percentage"]))

fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(radii, percentages, marker="o")
ax.set_xlabel("relative radius r")
ax.set_ylabel("converged runs [%]")
ax.set_ylim(-2, 102)
ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig(here / "sweep.png", dpi=150)
)";

}  // namespace

void Scenario::validate() const {
  opid::validate(model);
  if (elements.empty()) throw DomainError("scenario: no basis elements");
  for (const Mat& e : elements) validate_operator(model, e, "basis element");
  validate_operator(model, op_star, "true operator");
  validate_operator(model, op_circ, "initial operator");
  if (trials < 1) throw DomainError("scenario: trials must be >= 1");
  for (double r : radii) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw DomainError("scenario: radii must be finite and non-negative");
    }
  }
  if (!(tolerance > 0.0)) throw DomainError("scenario: tolerance must be positive");
}

Mat perturb_relative(const Mat& x, double rho, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mat u = gaussian(x.rows(), x.cols(), rng);
  while (u.norm() == 0.0) u = gaussian(x.rows(), x.cols(), rng);
  return x + rho * x.norm() * u / u.norm();
}

DriftInstance random_drift_instance(int n, int inputs, int outputs, double rho,
                                    std::uint64_t seed) {
  if (n < 1 || inputs < 1 || outputs < 1) {
    throw DimensionError("random_drift_instance: sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    DriftInstance inst;
    inst.a_star = gaussian(n, n, rng);
    inst.b = gaussian(n, inputs, rng);
    inst.c = gaussian(outputs, n, rng);
    if (numerical_rank(inst.a_star) != n ||
        numerical_rank(inst.b) != std::min(n, inputs) ||
        numerical_rank(inst.c) != std::min(n, outputs) ||
        !drift_hypotheses(inst.a_star, inst.b, inst.c)) {
      continue;
    }
    for (int k = 0; k < 100; ++k) {
      inst.a_circ = perturb_relative(inst.a_star, rho, rng());
      if (drift_hypotheses(inst.a_circ, inst.b, inst.c)) return inst;
    }
  }
  throw DomainError("random_drift_instance: no admissible sample found");
}

Scenario drift_scenario(const DriftInstance& inst, double horizon, Algorithm algorithm) {
  Scenario s;
  s.name = "drift";
  s.model = SystemModel::linear_drift(inst.b, inst.c, horizon);
  s.elements = BasisSet::canonical(inst.a_star.rows(), inst.a_star.cols()).elements();
  s.op_star = inst.a_star;
  s.op_circ = inst.a_circ;
  s.algorithm = algorithm;
  return s;
}

std::vector<Mat> random_basis(Eigen::Index rows, Eigen::Index cols, int count,
                              std::uint64_t seed) {
  if (count < 1 || count > rows * cols) {
    throw DomainError("random_basis: count must lie in [1, rows * cols]");
  }
  std::mt19937_64 rng(seed);
  for (;;) {
    std::vector<Mat> out;
    for (int j = 0; j < count; ++j) out.push_back(gaussian(rows, cols, rng));
    if (independent(out)) return out;
  }
}

std::vector<Mat> skew_canonical_basis(int n) {
  if (n < 2) throw DimensionError("skew_canonical_basis: n must be >= 2");
  std::vector<Mat> out;
  for (int r = 0; r < n; ++r) {
    for (int c = r + 1; c < n; ++c) {
      Mat e = Mat::Zero(n, n);
      e(r, c) = 1.0;
      e(c, r) = -1.0;
      out.push_back(e);
    }
  }
  return out;
}

std::vector<Mat> random_skew_basis(int n, int count, std::uint64_t seed) {
  if (count < 1 || count > n * (n - 1) / 2) {
    throw DomainError("random_skew_basis: count must lie in [1, n(n-1)/2]");
  }
  std::mt19937_64 rng(seed);
  for (;;) {
    std::vector<Mat> out;
    for (int j = 0; j < count; ++j) {
      const Mat x = gaussian(n, n, rng);
      out.push_back(0.5 * (x - x.transpose()));
    }
    if (independent(out)) return out;
  }
}

std::vector<Mat> union_basis(Eigen::Index rows, Eigen::Index cols, int extra,
                             std::uint64_t seed) {
  std::vector<Mat> out = BasisSet::canonical(rows, cols).elements();
  std::mt19937_64 rng(seed);
  for (int j = 0; j < extra; ++j) out.push_back(gaussian(rows, cols, rng));
  return out;
}

Mat embed_hermitian(const CMat& m) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n) throw DimensionError("embed_hermitian: matrix must be square");
  Mat out(2 * n, 2 * n);
  const Mat re = m.real();
  const Mat im = m.imag();
  out << im, re, -re, im;
  return out;
}

Vec embed_state(const CVec& psi) {
  Vec out(2 * psi.size());
  out << psi.real(), psi.imag();
  return out;
}

Mat embed_observer(const CVec& psi1) {
  const Eigen::Index n = psi1.size();
  Mat out(2, 2 * n);
  out.row(0) << psi1.real().transpose(), psi1.imag().transpose();
  out.row(1) << -psi1.imag().transpose(), psi1.real().transpose();
  return out;
}

std::vector<CMat> hermitian_canonical_basis(int n) {
  if (n < 1) throw DimensionError("hermitian_canonical_basis: n must be >= 1");
  const std::complex<double> i1(0.0, 1.0);
  std::vector<CMat> out;
  for (int k = 0; k < n; ++k) {
    CMat e = CMat::Zero(n, n);
    e(k, k) = 1.0;
    out.push_back(e);
  }
  for (int r = 0; r < n; ++r) {
    for (int c = r + 1; c < n; ++c) {
      CMat sym = CMat::Zero(n, n);
      sym(r, c) = 1.0;
      sym(c, r) = 1.0;
      out.push_back(sym);
      CMat anti = CMat::Zero(n, n);
      anti(r, c) = i1;
      anti(c, r) = -i1;
      out.push_back(anti);
    }
  }
  return out;
}

std::vector<CMat> random_hermitian_basis(int n, int count, std::uint64_t seed) {
  if (count < 1 || count > n * n) {
    throw DomainError("random_hermitian_basis: count must lie in [1, n^2]");
  }
  std::mt19937_64 rng(seed);
  for (;;) {
    std::vector<CMat> out;
    std::vector<Mat> embedded;
    for (int j = 0; j < count; ++j) {
      CMat x(n, n);
      x.real() = gaussian(n, n, rng);
      x.imag() = gaussian(n, n, rng);
      const CMat h = 0.5 * (x + x.adjoint());
      out.push_back(h);
      embedded.push_back(embed_hermitian(h));
    }
    if (independent(embedded)) return out;
  }
}

SchrodingerSetup setup_schrodinger(const CMat& h, const std::vector<CMat>& mu_basis,
                                   const CVec& psi0, const CVec& psi1, double horizon) {
  const Eigen::Index n = h.rows();
  if (psi0.size() != n || psi1.size() != n) {
    throw DimensionError("setup_schrodinger: state length differs from H");
  }
  if (mu_basis.empty()) throw DomainError("setup_schrodinger: empty basis");
  std::vector<Mat> elements;
  for (const CMat& mu : mu_basis) {
    if (mu.rows() != n || mu.cols() != n) {
      throw DimensionError("setup_schrodinger: basis element shape differs from H");
    }
    elements.push_back(embed_hermitian(mu));
  }
  SystemModel model = SystemModel::schrodinger_real(
      embed_hermitian(h), embed_observer(psi1), embed_state(psi0), horizon);
  BasisSet basis(std::move(elements));
  validate(model, basis);
  return {std::move(model), std::move(basis)};
}

SchrodingerReference reference_schrodinger() {
  using C = std::complex<double>;
  SchrodingerReference ref;
  ref.h = CMat::Zero(3, 3);
  ref.h.diagonal() << 4.0, 8.0, 16.0;
  ref.mu_star.resize(3, 3);
  ref.mu_star << C(-0.3243, 0.0), C(-3.4790, 0.7359), C(-0.5338, 1.9254),
      C(-3.4790, -0.7359), C(-3.8342, 0.0), C(-1.1697, 2.0256),
      C(-0.5338, -1.9254), C(-1.1697, -2.0256), C(1.0551, 0.0);
  ref.psi0 = CVec::Zero(3);
  ref.psi0(0) = 1.0;
  ref.psi1 = CVec::Constant(3, C(1.0 / std::sqrt(3.0), 0.0));
  ref.horizon = 10.0 * M_PI;
  return ref;
}

std::vector<Vec> sample_sphere(const BasisSet& basis, const Vec& center,
                               double radius_rel, int n, std::uint64_t seed) {
  if (n < 0) throw DomainError("sample_sphere: n must be non-negative");
  if (!(radius_rel >= 0.0)) throw DomainError("sample_sphere: radius must be >= 0");
  const double radius = radius_rel * basis.combine(center).norm();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Vec d(center.size());
    double scale = 0.0;
    do {
      for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = normal(rng);
      scale = basis.combine(d).norm();
    } while (scale == 0.0);
    out.push_back(radius == 0.0 ? center : Vec(center + (radius / scale) * d));
  }
  return out;
}

BasisSet reconstruction_basis(const Scenario& s, const GreedyOutcome& outcome) {
  const bool ordered = s.algorithm == Algorithm::OGR || s.algorithm == Algorithm::OLGR;
  BasisSet plain(ordered ? outcome.selected : s.elements);
  return BasisSet(plain.elements(), plain.coefficients_of(s.op_circ));
}

GreedyOutcome design_controls(const Scenario& s) {
  s.validate();
  GreedySettings settings = s.greedy;
  settings.opt.exec = s.exec;
  const Mat zero = Mat::Zero(s.op_circ.rows(), s.op_circ.cols());
  switch (s.algorithm) {
    case Algorithm::LGR:
    case Algorithm::GR: {
      const BasisSet basis(s.elements);
      const Vec alpha_circ =
          s.use_shift ? basis.coefficients_of(s.op_circ) : Vec(Vec::Zero(basis.size()));
      return run_greedy(s.algorithm, s.model, s.elements, alpha_circ, settings);
    }
    case Algorithm::OGR:
    case Algorithm::OLGR:
      return ogr(s.model, s.elements, s.use_shift ? s.op_circ : zero, settings,
                 s.algorithm == Algorithm::OLGR);
  }
  throw DomainError("unknown algorithm");
}

SweepResult run_sweep(const Scenario& s) {
  const auto t0 = Clock::now();
  const GreedyOutcome outcome = design_controls(s);
  const double offline = seconds_since(t0);
  SweepResult result = run_sweep(s, outcome.controls, reconstruction_basis(s, outcome));
  result.offline_seconds = offline;
  result.warnings.insert(result.warnings.begin(), outcome.warnings.begin(),
                         outcome.warnings.end());
  return result;
}

SweepResult run_sweep(const Scenario& s, const std::vector<ControlSignal>& controls,
                      const BasisSet& basis) {
  s.validate();
  if (controls.empty()) throw DomainError("run_sweep: no controls");
  const auto t0 = Clock::now();
  SweepResult result;
  result.name = s.name;
  result.algorithm = algorithm_name(s.algorithm);
  result.seed = s.seed;
  result.tolerance = s.tolerance;
  result.controls = controls;

  const Vec alpha_star = basis.coefficients_of(s.op_star);
  const double star_norm = s.op_star.norm();
  const double outside = (basis.combine(alpha_star) - s.op_star).norm();
  if (outside > 1e-8 * std::max(1.0, star_norm)) {
    result.warnings.push_back("true operator lies outside the reconstruction span (residual " +
                              short_fmt(outside) + ")");
  }

  GNProblem p{s.model, basis, controls, {}, s.greedy.n_steps, s.exec};
  p.data.resize(controls.size());
  parallel_for(static_cast<int>(controls.size()), s.exec, [&](int m) {
    const auto& c = controls[static_cast<std::size_t>(m)];
    p.data[static_cast<std::size_t>(m)] =
        observe(s.model, final_state(s.model, s.op_star, c, s.greedy.n_steps));
  });

  const int n_radii = static_cast<int>(s.radii.size());
  std::vector<std::vector<Vec>> inits;
  for (int i = 0; i < n_radii; ++i) {
    inits.push_back(sample_sphere(basis, alpha_star, s.radii[static_cast<std::size_t>(i)],
                                  s.trials, mix_seed(s.seed, static_cast<std::uint64_t>(i))));
  }

  result.trials.resize(static_cast<std::size_t>(n_radii * s.trials));
  parallel_for(n_radii * s.trials, s.exec, [&](int idx) {
    const int i = idx / s.trials;
    const int t = idx % s.trials;
    TrialResult& tr = result.trials[static_cast<std::size_t>(idx)];
    tr.radius = s.radii[static_cast<std::size_t>(i)];
    tr.trial = t;
    try {
      const GNReport rep =
          gn_solve(p, inits[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)], s.gn);
      tr.verdict = rep.verdict;
      tr.iterations = rep.iterations;
      const Mat a = basis.combine(rep.final_iterate());
      tr.rel_error = (a - s.op_star).norm() / (star_norm > 0.0 ? star_norm : 1.0);
    } catch (const std::exception&) {
      tr.verdict = GNVerdict::Diverged;
      tr.rel_error = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(tr.rel_error)) tr.rel_error = std::numeric_limits<double>::infinity();
    tr.success = tr.rel_error <= s.tolerance;
  });

  result.summary = summarize(s.radii, result.trials);
  result.online_seconds = seconds_since(t0);
  return result;
}

std::vector<RadiusSummary> summarize(const std::vector<double>& radii,
                                     const std::vector<TrialResult>& trials) {
  std::vector<RadiusSummary> out;
  for (double r : radii) {
    RadiusSummary row;
    row.radius = r;
    for (const TrialResult& t : trials) {
      if (t.radius != r) continue;
      ++row.trials;
      if (t.success) ++row.successes;
    }
    row.percentage = row.trials == 0 ? 0.0 : 100.0 * row.successes / row.trials;
    out.push_back(row);
  }
  return out;
}

std::string sweep_to_csv(const std::vector<RadiusSummary>& summary) {
  std::string out = "radius,trials,successes,percentage\n";
  for (const RadiusSummary& r : summary) {
    out += fmt(r.radius) + "," + std::to_string(r.trials) + "," +
           std::to_string(r.successes) + "," + fmt(r.percentage) + "\n";
  }
  return out;
}

std::vector<RadiusSummary> sweep_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "radius,trials,successes,percentage") {
    throw DomainError("sweep csv: unexpected header");
  }
  std::vector<RadiusSummary> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[4];
    for (auto& field : f) {
      if (!std::getline(row, field, ',')) throw DomainError("sweep csv: short row: " + line);
    }
    RadiusSummary r;
    try {
      r.radius = std::stod(f[0]);
      r.trials = std::stoi(f[1]);
      r.successes = std::stoi(f[2]);
      r.percentage = std::stod(f[3]);
    } catch (const std::logic_error&) {
      throw DomainError("sweep csv: malformed row: " + line);
    }
    out.push_back(r);
  }
  return out;
}

std::vector<RadiusSummary> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sweep_from_csv(ss.str());
}

std::string trials_to_csv(const std::vector<TrialResult>& trials) {
  std::string out = "radius,trial,success,rel_error,verdict,iterations\n";
  for (const TrialResult& t : trials) {
    out += fmt(t.radius) + "," + std::to_string(t.trial) + "," + (t.success ? "1" : "0") +
           "," + fmt(t.rel_error) + "," + verdict_name(t.verdict) + "," +
           std::to_string(t.iterations) + "\n";
  }
  return out;
}

void emit_outputs(const SweepResult& result, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_text(dir / "sweep.csv", sweep_to_csv(result.summary));
  write_text(dir / "trials.csv", trials_to_csv(result.trials));
  const fs::path controls = dir / "controls";
  fs::remove_all(controls);
  fs::create_directories(controls);
  for (std::size_t m = 0; m < result.controls.size(); ++m) {
    char name[32];
    std::snprintf(name, sizeof name, "control_%02zu.csv", m);
    write_control_csv(result.controls[m], controls / name);
  }
  std::ostringstream rep;
  rep << "scenario: " << result.name << "\n"
      << "algorithm: " << result.algorithm << "\n"
      << "seed: " << result.seed << "\n"
      << "tolerance: " << short_fmt(result.tolerance) << "\n"
      << "controls: " << result.controls.size() << "\n"
      << "offline_seconds: " << short_fmt(result.offline_seconds) << "\n"
      << "online_seconds: " << short_fmt(result.online_seconds) << "\n";
  for (const RadiusSummary& r : result.summary) {
    rep << "radius " << short_fmt(r.radius) << ": " << r.successes << "/" << r.trials
        << " (" << short_fmt(r.percentage) << "%)\n";
  }
  for (const std::string& w : result.warnings) rep << "warning: " << w << "\n";
  write_text(dir / "report.txt", rep.str());
  write_text(dir / "plot_sweep.py", kPlotScript);
}

bool OracleReport::passed() const {
  for (const Check& c : checks) {
    if (!c.pass) return false;
  }
  return !checks.empty();
}

double oracle_cost_closed_form(double r) {
  const double c = std::cosh(r);
  const double s = std::sinh(r);
  return 2.0 * c * c + 2.0 * s * s - 4.0 * c + 2.0;
}

double oracle_cost_curvature(double r) {
  const double c = std::cosh(r);
  const double s = std::sinh(r);
  return 8.0 * c * c + 8.0 * s * s - 4.0 * c;
}

OracleReport analytic_oracle(std::uint64_t seed, Execution exec) {
  const auto t0 = Clock::now();
  OracleReport rep;
  Vec y0(2);
  y0 << 1.0, 0.0;
  const SystemModel model =
      SystemModel::bilinear_control(Mat::Zero(2, 2), Mat::Identity(2, 2), y0, 1.0, false);
  Mat a1(2, 2), a2(2, 2);
  a1 << 1.0, 0.0, 0.0, -1.0;
  a2 << 0.0, 1.0, 1.0, 0.0;
  const BasisSet basis({a1, a2}, Vec::Zero(2));

  GreedySettings st;
  st.segments = 1;
  st.bound = 1.0;
  st.opt.seed = seed;
  st.opt.exec = exec;
  const GreedyOutcome out = gr(model, basis, basis.shift(), st);
  rep.eps1 = out.controls.at(0).values()(0, 0);
  rep.eps2 = out.controls.at(1).values()(0, 0);
  rep.fitting_minimizer = out.log.at(1).beta(0);
  const double target = std::log(std::cosh(1.0));
  rep.checks.push_back({"first control is +1", std::abs(rep.eps1 - 1.0) <= 1e-9,
                        "eps1 = " + fmt(rep.eps1)});
  rep.checks.push_back({"fitting minimizer is log cosh 1",
                        std::abs(rep.fitting_minimizer - target) <= 1e-6,
                        "beta = " + fmt(rep.fitting_minimizer) + ", expected " + fmt(target)});
  rep.checks.push_back({"second control is -1", std::abs(rep.eps2 + 1.0) <= 1e-9,
                        "eps2 = " + fmt(rep.eps2)});

  const GNProblem p = make_problem(model, basis, out.controls, Vec::Zero(2), 0, exec);
  const double j0 = 2.0 * cost(p, Vec::Zero(2));
  rep.checks.push_back({"cost vanishes at zero", std::abs(j0) <= 1e-14, "J(0) = " + fmt(j0)});

  std::mt19937_64 rng(mix_seed(seed, 73));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto disk_point = [&](double radius) {
    const double r = radius * std::sqrt(unit(rng));
    const double th = 2.0 * M_PI * unit(rng);
    Vec a(2);
    a << r * std::cos(th), r * std::sin(th);
    return a;
  };
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Vec a = disk_point(2.0);
    worst = std::max(worst, std::abs(2.0 * cost(p, a) - oracle_cost_closed_form(a.norm())));
  }
  rep.checks.push_back({"cost matches closed form", worst <= 1e-8,
                        "max deviation " + short_fmt(worst) + " over 20 points"});

  double min_curv = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 500; ++i) min_curv = std::min(min_curv, oracle_cost_curvature(0.01 * i));
  rep.checks.push_back({"closed-form curvature positive on [0, 5]",
                        min_curv > 0.0 && std::abs(oracle_cost_curvature(0.0) - 4.0) <= 1e-12,
                        "min " + short_fmt(min_curv) + ", at 0: " +
                            fmt(oracle_cost_curvature(0.0))});

  double worst_curv = 0.0;
  const double h = 1e-3;
  for (double x : {0.5, 1.0, 2.0, 3.0}) {
    Vec dir(2);
    dir << std::cos(0.3 * x), std::sin(0.3 * x);
    const double fd = (2.0 * cost(p, (x + h) * dir) - 4.0 * cost(p, x * dir) +
                       2.0 * cost(p, (x - h) * dir)) /
                      (h * h);
    worst_curv = std::max(worst_curv, std::abs(fd - oracle_cost_curvature(x)) /
                                          oracle_cost_curvature(x));
  }
  rep.checks.push_back({"simulated curvature matches closed form", worst_curv <= 1e-4,
                        "max relative deviation " + short_fmt(worst_curv)});

  int converged = 0;
  double worst_final = 0.0;
  for (int i = 0; i < 50; ++i) {
    const GNReport r = gn_solve(p, disk_point(2.0));
    const double e = r.final_iterate().norm();
    worst_final = std::max(worst_final, e);
    if (e <= 1e-8) ++converged;
  }
  rep.checks.push_back({"GN converges to zero from 50 inits", converged == 50,
                        std::to_string(converged) + "/50, worst |alpha| " +
                            short_fmt(worst_final)});

  const ControlOutputMap rev =
      ControlOutputMap::difference(model, Mat::Zero(2, 2), a2, 0);
  const double vp = rev.evaluate(ControlSignal::constant(Vec::Constant(1, 1.0), 1, 1.0)).squaredNorm();
  const double vm = rev.evaluate(ControlSignal::constant(Vec::Constant(1, -1.0), 1, 1.0)).squaredNorm();
  const GreedyOutcome reversed = gr(model, BasisSet({a2, a1}, Vec::Zero(2)), Vec::Zero(2), st);
  rep.observations.push_back(
      "reversed ordering (A2, A1): initialization objective equals " + fmt(vp) +
      " at eps = +1 and " + fmt(vm) + " at eps = -1, two global maximizers; GR picked eps1 = " +
      fmt(reversed.controls.at(0).values()(0, 0)));
  for (const IterationLog& e : out.log) {
    if (!e.alternative_minimizers.empty()) {
      rep.observations.push_back("iteration " + std::to_string(e.iteration) + " has " +
                                 std::to_string(e.alternative_minimizers.size()) +
                                 " alternative fitting minimizers");
    }
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

bool Diagnosis::passed() const {
  for (const Check& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

namespace {

void rank_checks(Diagnosis& d, const Mat& a, const Mat& b, const Mat& c, double horizon) {
  const int n = d.dim;
  d.observability_rank = numerical_rank(observability_matrix(c, a));
  d.controllability_rank = numerical_rank(controllability_matrix(a, b));
  d.checks.push_back({"observability rank", d.observability_rank == n,
                      std::to_string(d.observability_rank) + " of " + std::to_string(n)});
  d.checks.push_back({"controllability rank", d.controllability_rank == n,
                      std::to_string(d.controllability_rank) + " of " + std::to_string(n)});
  d.checks.push_back({"rank product equals N^2",
                      d.observability_rank * d.controllability_rank == n * n,
                      std::to_string(d.observability_rank * d.controllability_rank) + " vs " +
                          std::to_string(n * n)});
  const Spectrum g = symmetric_spectrum(gramian(a, b, horizon));
  d.gramian_lambda_min = g.lambda_min;
  d.checks.push_back({"controllability Gramian positive definite", g.positive_definite,
                      "lambda_min " + short_fmt(g.lambda_min) + ", lambda_max " +
                          short_fmt(g.lambda_max)});
}

// Real bilinear systems need so(n); embedded Schrodinger systems on C^(n/2)
// need su(n/2) or u(n/2).
void bilinear_checks(Diagnosis& d, const Mat& drift, const Mat& control, const Mat& c,
                     double bound, bool quantum) {
  const int n = d.dim;
  const int levels = n / 2;
  const int target = quantum ? levels * levels - 1 : n * (n - 1) / 2;
  const int target_max = quantum ? levels * levels : target;
  if (is_skew(drift, 1e-10) && is_skew(control, 1e-10)) {
    d.lie_dimension = lie_algebra_dimension(drift, control);
    const std::string want = target == target_max
                                 ? std::to_string(target)
                                 : std::to_string(target) + " or " + std::to_string(target_max);
    d.checks.push_back({"Lie algebra dimension",
                        d.lie_dimension >= target && d.lie_dimension <= target_max,
                        std::to_string(d.lie_dimension) + ", need " + want});
  } else {
    d.checks.push_back({"Lie algebra dimension", false,
                        "not evaluated: drift and control operators are not skew-symmetric"});
  }
  int best = -1;
  double best_c = 0.0;
  for (int i = 0; i <= 40; ++i) {
    const double cc = -bound + 2.0 * bound * i / 40.0;
    const int r = numerical_rank(observability_matrix(c, drift + cc * control));
    if (r > best) {
      best = r;
      best_c = cc;
    }
  }
  d.observability_rank = best;
  d.checks.push_back({"observable for some constant control", best == n,
                      "best rank " + std::to_string(best) + " of " + std::to_string(n) +
                          " at c = " + short_fmt(best_c)});
}

}  // namespace

Diagnosis diagnose(const SystemModel& model, const Mat& op_circ, double control_bound) {
  validate(model);
  validate_operator(model, op_circ, "linearization operator");
  Diagnosis d;
  d.dim = model.dim();
  switch (model.family) {
    case Family::LinearDrift:
      rank_checks(d, op_circ, model.input_matrix, model.observer, model.horizon);
      break;
    case Family::LinearControlMatrix:
      rank_checks(d, model.known_drift, op_circ, model.observer, model.horizon);
      break;
    case Family::Bilinear:
      if (model.unknown == BilinearUnknown::Drift) {
        bilinear_checks(d, op_circ, model.control_operator, model.observer, control_bound,
                        false);
      } else {
        bilinear_checks(d, model.known_drift, op_circ, model.observer, control_bound, false);
      }
      break;
    case Family::SchrodingerReal:
      bilinear_checks(d, model.known_drift, op_circ, model.observer, control_bound, true);
      break;
    case Family::GeneralNonlinear: {
      const Mat jac = model.nonlinear.jacobian(model.initial_state);
      rank_checks(d, jac, op_circ, model.observer, model.horizon);
      break;
    }
  }
  return d;
}

std::string format_checks(const std::vector<Check>& checks) {
  std::string out;
  for (const Check& c : checks) {
    out += (c.pass ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
  }
  return out;
}

}  // namespace opid
