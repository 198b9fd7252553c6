#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "opid/harness.hpp"
#include "support.hpp"

using namespace opid;
using namespace opid::testing;

namespace {

Scenario small_scenario() {
  Scenario s = drift_scenario(random_drift_instance(2, 2, 2, 0.05, 31));
  s.greedy.opt.multistart = 1;
  s.greedy.n_steps = 200;
  s.radii = {0.0, 0.05};
  s.trials = 6;
  s.seed = 4;
  return s;
}

}  // namespace

TEST(SampleSphere, RadiusSeedAndIsotropy) {
  const BasisSet basis(random_basis(3, 3, 9, 2));
  std::mt19937_64 rng(1);
  const Vec center = gaussian(9, 1, rng);
  const double ref = basis.combine(center).norm();
  const auto pts = sample_sphere(basis, center, 0.3, 2000, 7);
  ASSERT_EQ(pts.size(), 2000u);
  Vec mean = Vec::Zero(9 * 1);
  Mat dir_mean = Mat::Zero(3, 3);
  for (const Vec& x : pts) {
    const Mat d = basis.combine(x) - basis.combine(center);
    ASSERT_NEAR(d.norm(), 0.3 * ref, 1e-12 * ref);
    dir_mean += d / d.norm();
  }
  EXPECT_LT((dir_mean / 2000.0).norm(), 0.1);
  const auto again = sample_sphere(basis, center, 0.3, 5, 7);
  const auto other = sample_sphere(basis, center, 0.3, 5, 8);
  EXPECT_TRUE(again[0] == pts[0]);
  EXPECT_FALSE(other[0] == pts[0]);
  for (const Vec& x : sample_sphere(basis, center, 0.0, 3, 1)) EXPECT_TRUE(x == center);
}

TEST(PerturbRelative, ExactRelativeDistance) {
  std::mt19937_64 rng(2);
  const Mat x = gaussian(4, 4, rng);
  const Mat y = perturb_relative(x, 0.25, 3);
  EXPECT_NEAR((y - x).norm(), 0.25 * x.norm(), 1e-12);
  EXPECT_TRUE(perturb_relative(x, 0.25, 3) == y);
}

TEST(RandomDriftInstance, FullRankAtBothOperators) {
  const DriftInstance inst = random_drift_instance(3, 2, 2, 0.1, 9);
  for (const Mat& a : {inst.a_star, inst.a_circ}) {
    EXPECT_EQ(numerical_rank(observability_matrix(inst.c, a)), 3);
    EXPECT_EQ(numerical_rank(controllability_matrix(a, inst.b)), 3);
  }
  EXPECT_NEAR((inst.a_circ - inst.a_star).norm(), 0.1 * inst.a_star.norm(), 1e-12);
}

TEST(Embedding, HermitianActsAsMinusI) {
  std::mt19937_64 rng(3);
  const CMat m = hermitian_gaussian(3, rng);
  CVec psi(3);
  psi.real() = gaussian(3, 1, rng);
  psi.imag() = gaussian(3, 1, rng);
  const Mat e = embed_hermitian(m);
  EXPECT_TRUE(is_skew(e));
  const std::complex<double> i1(0.0, 1.0);
  EXPECT_LE((e * embed_state(psi) - embed_state(-i1 * (m * psi))).norm(), 1e-12);
  const CMat m2 = hermitian_gaussian(3, rng);
  EXPECT_LE((embed_hermitian(m + 2.0 * m2) - e - 2.0 * embed_hermitian(m2)).norm(), 1e-12);
}

TEST(Embedding, CanonicalHermitianBasis) {
  const auto basis = hermitian_canonical_basis(3);
  ASSERT_EQ(basis.size(), 9u);
  std::vector<Mat> real;
  for (const CMat& b : basis) {
    EXPECT_LE((b - b.adjoint()).norm(), 0.0);
    real.push_back(embed_hermitian(b));
  }
  EXPECT_NO_THROW(BasisSet{real});
  const auto random = random_hermitian_basis(3, 4, 5);
  ASSERT_EQ(random.size(), 4u);
  for (const CMat& b : random) EXPECT_LE((b - b.adjoint()).norm(), 1e-14);
}

TEST(ReferenceSystem, Values) {
  const SchrodingerReference ref = reference_schrodinger();
  EXPECT_EQ(ref.h.rows(), 3);
  EXPECT_DOUBLE_EQ(ref.h(0, 0).real(), 4.0);
  EXPECT_DOUBLE_EQ(ref.h(1, 1).real(), 8.0);
  EXPECT_DOUBLE_EQ(ref.h(2, 2).real(), 16.0);
  EXPECT_NEAR(ref.horizon, 10.0 * M_PI, 1e-12);
  EXPECT_NEAR(ref.psi1.norm(), 1.0, 1e-15);
  EXPECT_LE((ref.mu_star - ref.mu_star.adjoint()).norm(), 1e-15);
}

TEST(Diagnose, LinearDriftPassesAndZeroObserverFails) {
  const DriftInstance inst = random_drift_instance(3, 2, 2, 0.05, 12);
  const SystemModel m = SystemModel::linear_drift(inst.b, inst.c, 1.0);
  const Diagnosis d = diagnose(m, inst.a_circ);
  EXPECT_TRUE(d.passed()) << format_checks(d.checks);
  EXPECT_GT(d.gramian_lambda_min, 0.0);
  const Diagnosis z = diagnose(SystemModel::linear_drift(inst.b, Mat::Zero(2, 3), 1.0), inst.a_circ);
  EXPECT_FALSE(z.passed());
  EXPECT_EQ(z.observability_rank, 0);
}

TEST(Diagnose, BilinearLieDimension) {
  std::mt19937_64 rng(13);
  const SystemModel m =
      SystemModel::bilinear_drift(skew_gaussian(3, rng), gaussian(2, 3, rng), unit(3, rng), 1.0);
  const Diagnosis d = diagnose(m, skew_gaussian(3, rng));
  EXPECT_EQ(d.lie_dimension, 3);
  EXPECT_TRUE(d.passed()) << format_checks(d.checks);

  Mat a = Mat::Zero(4, 4), b = Mat::Zero(4, 4);
  a(0, 1) = -1.0;
  a(1, 0) = 1.0;
  b(2, 3) = -1.0;
  b(3, 2) = 1.0;
  const SystemModel c = SystemModel::bilinear_drift(b, Mat::Identity(4, 4), unit(4, rng), 1.0);
  const Diagnosis dc = diagnose(c, a);
  EXPECT_EQ(dc.lie_dimension, 2);
  EXPECT_FALSE(dc.passed());
}

TEST(Diagnose, ReferenceSchrodingerSystem) {
  const SchrodingerReference ref = reference_schrodinger();
  const SchrodingerSetup s =
      setup_schrodinger(ref.h, hermitian_canonical_basis(3), ref.psi0, ref.psi1, ref.horizon);
  const Diagnosis d = diagnose(s.model, embed_hermitian(ref.mu_star));
  EXPECT_GE(d.lie_dimension, 8);
  EXPECT_LE(d.lie_dimension, 9);
  EXPECT_TRUE(d.passed()) << format_checks(d.checks);
}

TEST(SweepCsv, RoundTripAndHeaderOnly) {
  const std::vector<RadiusSummary> rows{{0.1, 100, 97, 97.0}, {1.0 / 3.0, 7, 3, 300.0 / 7.0}};
  const std::string text = sweep_to_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "radius,trials,successes,percentage");
  EXPECT_EQ(sweep_from_csv(text), rows);
  EXPECT_TRUE(sweep_from_csv(sweep_to_csv({})).empty());
  EXPECT_THROW(sweep_from_csv("radius,trials\n"), DomainError);
  EXPECT_THROW(sweep_from_csv("radius,trials,successes,percentage\n0.1,x,1,2\n"), DomainError);
}

TEST(Summarize, CountsPerRadius) {
  std::vector<TrialResult> t(5);
  for (int i = 0; i < 5; ++i) {
    t[i].radius = i < 3 ? 0.1 : 0.5;
    t[i].success = i != 1;
  }
  const auto s = summarize({0.1, 0.5}, t);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].trials, 3);
  EXPECT_EQ(s[0].successes, 2);
  EXPECT_NEAR(s[0].percentage, 200.0 / 3.0, 1e-12);
  EXPECT_EQ(s[1].successes, 2);
  EXPECT_DOUBLE_EQ(s[1].percentage, 100.0);
}

TEST(ScenarioValidate, RejectsBadSettings) {
  Scenario s = small_scenario();
  EXPECT_NO_THROW(s.validate());
  s.radii = {-0.1};
  EXPECT_THROW(s.validate(), DomainError);
  s = small_scenario();
  s.trials = 0;
  EXPECT_THROW(s.validate(), DomainError);
  s = small_scenario();
  s.tolerance = 0.0;
  EXPECT_THROW(s.validate(), DomainError);
}

// Radius zero starts GN at the true operator, so every trial succeeds; the
// sweep is reproducible and independent of the execution mode.
TEST(RunSweep, ZeroRadiusAndDeterminism) {
  namespace fs = std::filesystem;
  Scenario s = small_scenario();
  const SweepResult a = run_sweep(s);
  ASSERT_EQ(a.summary.size(), 2u);
  EXPECT_EQ(a.summary[0].successes, s.trials);
  EXPECT_DOUBLE_EQ(a.summary[0].percentage, 100.0);
  EXPECT_EQ(a.trials.size(), 2u * s.trials);
  s.exec = Execution::Serial;
  const SweepResult b = run_sweep(s);
  EXPECT_EQ(a.summary, b.summary);
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(a.trials[i].rel_error, b.trials[i].rel_error);
  }

  const fs::path dir = fs::temp_directory_path() / "opid_sweep_outputs";
  fs::remove_all(dir);
  emit_outputs(a, dir);
  EXPECT_EQ(read_sweep_csv(dir / "sweep.csv"), a.summary);
  for (const char* f : {"trials.csv", "report.txt", "plot_sweep.py"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(read_controls_dir(dir).size(), a.controls.size());
  fs::remove_all(dir);
}

TEST(RunSweep, FixedControlsReuseData) {
  Scenario s = small_scenario();
  s.radii = {0.02};
  const GreedyOutcome out = design_controls(s);
  const BasisSet basis = reconstruction_basis(s, out);
  EXPECT_EQ(basis.size(), static_cast<int>(s.elements.size()));
  const SweepResult r = run_sweep(s, out.controls, basis);
  EXPECT_EQ(r.summary[0].successes, s.trials);
  for (const TrialResult& t : r.trials) EXPECT_LE(t.rel_error, s.tolerance);
}

TEST(ReconstructionBasis, SelectedElementsForOgr) {
  Scenario s = small_scenario();
  s.algorithm = Algorithm::OGR;
  s.elements = union_basis(2, 2, 2, 3);
  const GreedyOutcome out = design_controls(s);
  const BasisSet basis = reconstruction_basis(s, out);
  ASSERT_EQ(basis.size(), static_cast<int>(out.selected.size()));
  for (int j = 0; j < basis.size(); ++j) EXPECT_TRUE(basis[j] == out.selected[j]);
}

TEST(Oracle, ClosedFormCost) {
  EXPECT_DOUBLE_EQ(oracle_cost_closed_form(0.0), 0.0);
  const double h = 1e-4;
  for (double r : {0.3, 1.0, 2.5}) {
    const double fd = (oracle_cost_closed_form(r + h) - 2.0 * oracle_cost_closed_form(r) +
                       oracle_cost_closed_form(r - h)) /
                      (h * h);
    EXPECT_NEAR(oracle_cost_curvature(r), fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}
