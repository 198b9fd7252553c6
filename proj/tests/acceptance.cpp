#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <ostream>
#include <sstream>
#include <string>

#include "opid/cli.hpp"
#include "opid/config.hpp"
#include "opid/gauss_newton.hpp"
#include "opid/greedy.hpp"
#include "opid/harness.hpp"
#include "support.hpp"

using namespace opid;
using namespace opid::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::current_path() / "acceptance_out";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Config shipped_config(const std::string& name, const fs::path& output) {
  Config cfg = load_config(fs::path(OPID_CONFIG_DIR) / name);
  cfg.output = output;
  return cfg;
}

Outcome oracle() {
  const OracleReport rep = analytic_oracle(0);
  std::string failed;
  for (const Check& c : rep.checks) {
    if (!c.pass) failed += " [" + c.name + ": " + c.detail + "]";
  }
  const bool ok = rep.passed() && rep.eps1 == 1.0 && rep.eps2 == -1.0 &&
                  std::abs(rep.fitting_minimizer - std::log(std::cosh(1.0))) <= 1e-6;
  return {ok, "eps1 = " + num(rep.eps1) + ", eps2 = " + num(rep.eps2) + ", beta error " +
                  num(std::abs(rep.fitting_minimizer - std::log(std::cosh(1.0)))) + ", " +
                  std::to_string(rep.checks.size()) + " checks" + failed};
}

Outcome lgr_positive_definite() {
  int ok = 0;
  double worst = INFINITY;
  for (int i = 0; i < 20; ++i) {
    const Scenario s = drift_scenario(random_drift_instance(3, 3, 3, 0.01, 100 + i));
    const BasisSet basis(s.elements);
    const GreedyOutcome out = lgr(s.model, basis, basis.coefficients_of(s.op_circ), s.greedy);
    const double ratio = out.spectrum.lambda_min / out.spectrum.lambda_max;
    worst = std::min(worst, ratio);
    ok += ratio > 1e-10;
  }
  return {ok == 20, std::to_string(ok) + "/20 instances, worst lambda_min/lambda_max " + num(worst)};
}

Outcome desk_sweep() {
  const Config cfg = shipped_config("drift_lgr.json", scratch() / "sweep_a");
  std::ostringstream log;
  if (cmd_sweep(cfg, log) != kExitOk) return {false, "sweep failed: " + log.str()};
  const auto rows = read_sweep_csv(cfg.output / "sweep.csv");
  bool ok = rows.size() == 3;
  std::string detail;
  for (const RadiusSummary& r : rows) {
    ok = ok && r.trials == 100 && r.percentage >= 90.0;
    detail += "r = " + num(r.radius) + ": " + num(r.percentage) + "%  ";
  }
  return {ok, detail + "(tolerance " + num(cfg.scenario.tolerance) + ")"};
}

Outcome jacobian_consistency() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  int triples = 0;
  for (const std::string& fam : family_names()) {
    for (int t = 0; t < 10; ++t) {
      const Instance in = random_instance(fam, rng);
      const BasisSet basis(in.basis);
      const Mat op = basis.combine(in.alpha);
      const ControlSignal u = random_control(10, in.model.channels(), in.model.horizon, rng);
      const int n = default_steps(in.model.horizon);
      const Mat lin = in.model.observer *
                      solve_linearized_all(in.model, op, in.basis, u, n).sensitivities;
      Mat fd(lin.rows(), lin.cols());
      const double h = 1e-5;
      for (int j = 0; j < basis.size(); ++j) {
        fd.col(j) = (observe(in.model, final_state(in.model, op + h * basis[j], u, n)) -
                     observe(in.model, final_state(in.model, op - h * basis[j], u, n))) /
                    (2.0 * h);
      }
      worst = std::max(worst, (lin - fd).norm() / fd.norm());
      ++triples;
    }
  }
  return {worst <= 1e-5, std::to_string(triples) + " triples over " +
                             std::to_string(family_names().size()) +
                             " families, worst relative error " + num(worst)};
}

double max_norm_drift(const SystemModel& m, const Mat& op, const ControlSignal& u) {
  const Trajectory tr = solve_forward(m, op, u, 5000);
  const double n0 = m.initial_state.norm();
  double worst = 0.0;
  for (const Vec& y : tr.states) worst = std::max(worst, std::abs(y.norm() - n0));
  return worst;
}

Outcome norm_preservation() {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  int runs = 0;
  for (const std::string fam : {"bilinear_drift", "bilinear_control", "schrodinger"}) {
    for (int t = 0; t < 10; ++t) {
      const Instance in = random_instance(fam, rng);
      const ControlSignal u = random_control(10, 1, in.model.horizon, rng);
      worst = std::max(worst, max_norm_drift(in.model, BasisSet(in.basis).combine(in.alpha), u));
      ++runs;
    }
  }
  const SchrodingerReference ref = reference_schrodinger();
  const SchrodingerSetup s =
      setup_schrodinger(ref.h, hermitian_canonical_basis(3), ref.psi0, ref.psi1, ref.horizon);
  double worst_ref = 0.0;
  for (int t = 0; t < 10; ++t) {
    const ControlSignal u = random_control(10, 1, ref.horizon, rng);
    worst_ref = std::max(worst_ref, max_norm_drift(s.model, embed_hermitian(ref.mu_star), u));
  }
  worst_ref = std::max(worst_ref, max_norm_drift(s.model, embed_hermitian(ref.mu_star),
                                                 ControlSignal::zero(1, ref.horizon)));
  return {std::max(worst, worst_ref) <= 1e-8,
          std::to_string(runs) + " random runs, worst drift " + num(worst) +
              "; reference system, worst drift " + num(worst_ref)};
}

Outcome residual_identity() {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Instance in = random_instance("linear_drift", rng);
    const BasisSet basis(in.basis);
    std::vector<ControlSignal> controls;
    for (int m = 0; m < 4; ++m) controls.push_back(random_control(10, in.model.channels(), 1.0, rng));
    const GNProblem p = make_problem(in.model, basis, controls, in.alpha);
    const Vec alpha = in.alpha + 0.3 * gaussian(basis.size(), 1, rng);
    const Vec d = in.alpha - alpha;
    const double j = cost(p, alpha);
    const double q = 0.5 * d.dot(wtilde(p, in.alpha, alpha) * d);
    worst = std::max(worst, std::abs(j - q) / (1.0 + j));
  }
  return {worst <= 1e-6, "20 instances, worst |J - Q| / (1 + J) = " + num(worst)};
}

Outcome rank_stability() {
  std::mt19937_64 rng(7);
  int preserved = 0, total = 0;
  for (int i = 0; i < 100; ++i) {
    const int n = 2 + i % 9;
    Mat a = gaussian(n, n, rng);
    while (numerical_rank(a) < n) a = gaussian(n, n, rng);
    const double smin = smallest_singular_value(a);
    for (int k = 0; k < 10; ++k) {
      Mat e = gaussian(n, n, rng);
      e *= 0.999 * smin / spectral_norm(e);
      preserved += numerical_rank(a + e) == n;
      ++total;
    }
  }
  return {preserved == total, std::to_string(preserved) + "/" + std::to_string(total) +
                                  " perturbations of 100 matrices keep full rank"};
}

Outcome ogr_efficiency() {
  const Config cfg = shipped_config("drift_ogr.json", scratch() / "ogr");
  const Scenario& s = cfg.scenario;
  const bool observable = numerical_rank(observability_matrix(s.model.observer, s.op_star)) == 3;
  const bool controllable = numerical_rank(controllability_matrix(s.op_star, s.model.input_matrix)) == 3;
  const GreedyOutcome out = design_controls(s);
  const bool ok = observable && controllable && s.elements.size() == 18 &&
                  s.model.outputs() == 3 && out.controls.size() <= 4 &&
                  out.spectrum.positive_definite;
  return {ok, std::to_string(out.controls.size()) + " controls, " +
                  std::to_string(out.selected.size()) + " of " +
                  std::to_string(s.elements.size()) + " elements selected, lambda_min " +
                  num(out.spectrum.lambda_min)};
}

Outcome one_step_gn() {
  std::mt19937_64 rng(9);
  int ok = 0;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Instance in = random_instance("linear_control_matrix", rng);
    const BasisSet basis(in.basis);
    std::vector<ControlSignal> controls;
    for (int m = 0; m < 4; ++m) controls.push_back(random_control(10, in.model.channels(), 1.0, rng));
    const GNProblem p = make_problem(in.model, basis, controls, in.alpha, 200);
    const Vec zero = Vec::Zero(basis.size());
    const Mat jac = jacobian(p, zero);
    const Vec direct = jac.colPivHouseholderQr().solve(-residuals(p, zero));
    const Vec init = (t % 2 ? 10.0 : 1.0) * gaussian(basis.size(), 1, rng);
    const GNReport rep = gn_solve(p, init);
    const double err = (rep.iterates.at(std::min<std::size_t>(1, rep.iterates.size() - 1)) - direct).norm() /
                       std::max(1.0, direct.norm());
    worst = std::max(worst, err);
    ok += rep.verdict == GNVerdict::Converged && rep.iterations == 1 && err <= 1e-10;
  }
  return {ok == 20, std::to_string(ok) + "/20 inits converge after one update, worst deviation from the normal equations " + num(worst)};
}

Outcome determinism() {
  const fs::path a = scratch() / "sweep_a";
  const Config cfg = shipped_config("drift_lgr.json", scratch() / "sweep_b");
  std::ostringstream log;
  if (cmd_sweep(cfg, log) != kExitOk) return {false, "sweep failed: " + log.str()};
  int compared = 0;
  std::string differing;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (entry.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(entry.path(), a);
    ++compared;
    if (slurp(entry.path()) != slurp(cfg.output / rel)) differing += " " + rel.string();
  }
  return {compared >= 2 && differing.empty(),
          std::to_string(compared) + " CSV files compared" +
              (differing.empty() ? ", all byte-identical" : ", differing:" + differing)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "analytic 2x2 bilinear oracle", 5.0, oracle},
      {2, "LGR yields a positive definite GN matrix", 300.0, lgr_positive_definite},
      {3, "desk-scale LGR sweep", 900.0, desk_sweep},
      {4, "Jacobian consistency", 60.0, jacobian_consistency},
      {5, "norm preservation", 30.0, norm_preservation},
      {6, "residual identity", 120.0, residual_identity},
      {7, "rank stability", 10.0, rank_stability},
      {8, "OGR efficiency", 600.0, ogr_efficiency},
      {9, "one-step GN on affine residuals", 10.0, one_step_gn},
      {10, "sweep determinism", 900.0, determinism},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): "
              << o.detail << "; " << num(secs) << " s of " << num(c.budget_seconds) << " s"
              << (in_time ? "" : " OVER BUDGET") << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
