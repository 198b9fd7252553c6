#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"

#include "opid/greedy.hpp"
#include "opid/harness.hpp"
#include "support.hpp"

using namespace opid;
using namespace opid::testing;

namespace {

GreedySettings quick_settings(Execution exec = Execution::Parallel) {
  GreedySettings s;
  s.opt.multistart = 2;
  s.opt.seed = 5;
  s.opt.exec = exec;
  s.n_steps = 200;
  return s;
}

const Scenario& drift() {
  static const Scenario s = drift_scenario(random_drift_instance(3, 3, 2, 0.05, 21));
  return s;
}

Vec circ_alpha(const Scenario& s) { return BasisSet(s.elements).coefficients_of(s.op_circ); }

void expect_same(const GreedyOutcome& a, const GreedyOutcome& b) {
  ASSERT_EQ(a.controls.size(), b.controls.size());
  for (std::size_t i = 0; i < a.controls.size(); ++i) EXPECT_TRUE(a.controls[i] == b.controls[i]);
  EXPECT_EQ(a.order, b.order);
  EXPECT_TRUE(a.w_hat == b.w_hat);
}

}  // namespace

TEST(Algorithm, NamesRoundTrip) {
  for (Algorithm a : {Algorithm::LGR, Algorithm::GR, Algorithm::OGR, Algorithm::OLGR}) {
    EXPECT_EQ(parse_algorithm(algorithm_name(a)), a);
  }
  EXPECT_THROW(parse_algorithm("SGD"), DomainError);
}

TEST(FittingClosedForm, MatchesLeastSquaresResidual) {
  std::mt19937_64 rng(1);
  for (int k = 1; k <= 4; ++k) {
    const Mat o = gaussian(7, k + 1, rng);
    const std::optional<Vec> beta = fitting_closed_form(o.transpose() * o);
    ASSERT_TRUE(beta.has_value());
    const Vec ls = o.leftCols(k).householderQr().solve(o.col(k));
    EXPECT_LE((*beta - ls).norm(), 1e-10 * std::max(1.0, ls.norm()));
    const Vec v = kernel_vector(*beta);
    EXPECT_DOUBLE_EQ(v(k), -1.0);
    EXPECT_NEAR(v.dot(o.transpose() * o * v), (o.leftCols(k) * ls - o.col(k)).squaredNorm(), 1e-10);
  }
  EXPECT_EQ(fitting_closed_form(Mat::Ones(1, 1))->size(), 0);
  Mat singular = Mat::Zero(3, 3);
  singular(2, 2) = 1.0;
  EXPECT_FALSE(fitting_closed_form(singular).has_value());
}

TEST(BuildW, GramOfObservedSensitivities) {
  std::mt19937_64 rng(2);
  const Instance in = random_instance("linear_drift", rng);
  const BasisSet basis(in.basis);
  const ControlSignal u = random_control(5, in.model.channels(), 1.0, rng);
  const WMatrix w = build_W(in.model, basis, in.alpha, u, 200);
  EXPECT_LE((w.w - w.w.transpose()).norm(), 1e-14 * w.w.norm());
  EXPECT_GE(symmetric_spectrum(w.w).lambda_min, -1e-12 * w.w.norm());
  for (int j = 0; j < basis.size(); ++j) {
    EXPECT_LE((w.observed.col(j) -
               observe(in.model, solve_linearized(in.model, basis, in.alpha, j, u, 200)))
                  .norm(),
              1e-12);
  }
}

TEST(Settings, BoxChannelsMustMatch) {
  GreedySettings s;
  s.box = AdmissibleBox::symmetric(2, 1.0);
  EXPECT_THROW(s.resolve_box(3), DimensionError);
  EXPECT_EQ(s.resolve_box(2).channels(), 2);
}

// After step k the leading k x k block of the cumulative matrix is positive
// definite, and the final matrix is positive definite.
TEST(Lgr, LeadingBlocksPositiveDefinite) {
  const Scenario& s = drift();
  const GreedyOutcome out = lgr(s.model, BasisSet(s.elements), circ_alpha(s), quick_settings());
  ASSERT_EQ(out.controls.size(), s.elements.size());
  ASSERT_EQ(out.log.size(), s.elements.size());
  for (const IterationLog& e : out.log) {
    ASSERT_EQ(e.spectrum.size(), e.iteration);
    EXPECT_GT(e.spectrum.minCoeff(), 0.0) << "iteration " << e.iteration;
    EXPECT_FALSE(e.warning);
  }
  EXPECT_TRUE(out.spectrum.positive_definite);
  EXPECT_TRUE(out.warnings.empty());
  for (const ControlSignal& c : out.controls) {
    EXPECT_EQ(c.segments(), 10);
    EXPECT_LE(c.values().cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Lgr, SerialParallelAndRepeatAgree) {
  const Scenario& s = drift();
  const BasisSet basis(s.elements);
  const GreedyOutcome a = lgr(s.model, basis, circ_alpha(s), quick_settings(Execution::Serial));
  const GreedyOutcome b = lgr(s.model, basis, circ_alpha(s), quick_settings(Execution::Parallel));
  const GreedyOutcome c = lgr(s.model, basis, circ_alpha(s), quick_settings(Execution::Parallel));
  expect_same(a, b);
  expect_same(b, c);
}

TEST(Lgr, ZeroObserverWarns) {
  std::mt19937_64 rng(3);
  const SystemModel m = SystemModel::linear_drift(gaussian(2, 1, rng), Mat::Zero(1, 2), 1.0);
  const BasisSet basis = BasisSet::canonical(2, 2);
  const GreedyOutcome out = lgr(m, basis, gaussian(4, 1, rng), quick_settings());
  EXPECT_FALSE(out.spectrum.positive_definite);
  EXPECT_FALSE(out.warnings.empty());
}

TEST(Gr, PositiveDefiniteOnDriftInstance) {
  const Scenario s = drift_scenario(random_drift_instance(2, 2, 1, 0.05, 23));
  const GreedyOutcome out = gr(s.model, BasisSet(s.elements), circ_alpha(s), quick_settings());
  EXPECT_EQ(out.controls.size(), s.elements.size());
  EXPECT_TRUE(out.spectrum.positive_definite);
}

TEST(Ogr, SelectsFullRankSubsetOfOvercompleteSet) {
  const DriftInstance inst = random_drift_instance(2, 2, 2, 0.05, 22);
  const Scenario s = drift_scenario(inst);
  const std::vector<Mat> cands = union_basis(2, 2, 3, 7);
  for (const bool linearized : {false, true}) {
    const GreedyOutcome out = ogr(s.model, cands, Mat(), quick_settings(), linearized);
    EXPECT_EQ(out.algorithm, linearized ? Algorithm::OLGR : Algorithm::OGR);
    ASSERT_EQ(out.selected.size(), 4u);
    // Skipped elements are already separated by earlier controls.
    int splits = 0;
    for (const IterationLog& e : out.log) splits += e.step == "split";
    EXPECT_EQ(out.controls.size(), static_cast<std::size_t>(1 + splits));
    EXPECT_EQ(std::set<int>(out.order.begin(), out.order.end()).size(), 4u);
    for (int idx : out.order) {
      EXPECT_GE(idx, 0);
      EXPECT_LT(idx, static_cast<int>(cands.size()));
    }
    EXPECT_TRUE(out.spectrum.positive_definite);
  }
}

TEST(Ogr, RejectsDegenerateCandidates) {
  const Scenario& s = drift();
  EXPECT_THROW(ogr(s.model, {}, Mat(), quick_settings()), DomainError);
  EXPECT_THROW(ogr(s.model, {Mat::Zero(3, 3)}, Mat(), quick_settings()), DomainError);
  GreedySettings bad = quick_settings();
  bad.tol1 = 0.0;
  EXPECT_THROW(ogr(s.model, s.elements, Mat(), bad), DomainError);
}

TEST(WriteOutcome, RoundTrip) {
  namespace fs = std::filesystem;
  const Scenario& s = drift();
  const GreedyOutcome out = lgr(s.model, BasisSet(s.elements), circ_alpha(s), quick_settings());
  const fs::path dir = fs::temp_directory_path() / "opid_greedy_roundtrip";
  fs::remove_all(dir);
  write_outcome(out, dir);
  const std::vector<ControlSignal> back = read_controls_dir(dir);
  ASSERT_EQ(back.size(), out.controls.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_TRUE(back[i] == out.controls[i]);
  EXPECT_EQ(read_controls_dir(dir / "controls").size(), back.size());

  std::ifstream jf(dir / "selected_basis.json");
  const nlohmann::json j = nlohmann::json::parse(jf);
  EXPECT_EQ(j["algorithm"], "LGR");
  ASSERT_EQ(j["elements"].size(), out.selected.size());
  EXPECT_DOUBLE_EQ(j["elements"][4][1][1].get<double>(), out.selected[4](1, 1));
  EXPECT_TRUE(fs::exists(dir / "basis_order.txt"));
  EXPECT_TRUE(fs::exists(dir / "greedy_log.txt"));
  fs::remove_all(dir);
  EXPECT_ANY_THROW(read_controls_dir(dir));
}
