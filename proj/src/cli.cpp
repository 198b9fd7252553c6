#include "opid/cli.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <streambuf>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

namespace opid {

namespace {

namespace fs = std::filesystem;

class NullBuffer : public std::streambuf {
 protected:
  int overflow(int c) override { return c; }
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

bool ordered(Algorithm a) { return a == Algorithm::OGR || a == Algorithm::OLGR; }

std::vector<Mat> read_selected_basis(const fs::path& controls_dir) {
  fs::path path = controls_dir / "selected_basis.json";
  if (!fs::exists(path)) path = controls_dir.parent_path() / "selected_basis.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("selected_basis.json not found next to " + controls_dir.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  std::vector<Mat> out;
  for (const auto& e : j.at("elements")) {
    const auto rows = e.get<std::vector<std::vector<double>>>();
    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    out.push_back(m);
  }
  return out;
}

template <class F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace

int cmd_offline(const Config& cfg, std::ostream& log) {
  return guarded(log, [&] {
    set_thread_count(cfg.threads);
    const GreedyOutcome outcome = design_controls(cfg.scenario);
    write_outcome(outcome, cfg.output);
    std::ofstream summary(cfg.output / "offline_summary.txt");
    summary << "algorithm " << algorithm_name(outcome.algorithm) << "\n"
            << "seed " << cfg.seed << "\n"
            << "controls " << outcome.controls.size() << "\n"
            << "lambda_min " << fmt(outcome.spectrum.lambda_min) << "\n"
            << "lambda_max " << fmt(outcome.spectrum.lambda_max) << "\n"
            << "positive_definite " << (outcome.spectrum.positive_definite ? 1 : 0) << "\n";
    for (const std::string& w : outcome.warnings) summary << "warning " << w << "\n";
    log << algorithm_name(outcome.algorithm) << ": " << outcome.controls.size()
        << " controls, lambda_min " << fmt(outcome.spectrum.lambda_min) << ", lambda_max "
        << fmt(outcome.spectrum.lambda_max) << ", seed " << cfg.seed << "\n";
    for (const std::string& w : outcome.warnings) log << "warning: " << w << "\n";
    return outcome.spectrum.positive_definite ? kExitOk : kExitWarning;
  });
}

int cmd_online(const Config& cfg, const fs::path& controls_dir, std::ostream& log) {
  return guarded(log, [&] {
    set_thread_count(cfg.threads);
    const Scenario& s = cfg.scenario;
    const std::vector<ControlSignal> controls = read_controls_dir(controls_dir);
    const BasisSet basis(ordered(s.algorithm) ? read_selected_basis(controls_dir) : s.elements);
    const Vec alpha_star = basis.coefficients_of(s.op_star);
    const Vec alpha_circ = basis.coefficients_of(s.op_circ);
    GNProblem p{s.model, basis, controls, {}, s.greedy.n_steps, s.exec};
    for (const ControlSignal& c : controls) {
      p.data.push_back(observe(s.model, final_state(s.model, s.op_star, c, s.greedy.n_steps)));
    }
    const GNReport rep = gn_solve(p, alpha_circ, s.gn);
    write_report(rep, cfg.output, alpha_star, &basis);
    const double err = (basis.combine(rep.final_iterate()) - s.op_star).norm() /
                       std::max(s.op_star.norm(), 1e-300);
    std::ofstream summary(cfg.output / "online_summary.txt");
    summary << "seed " << cfg.seed << "\n"
            << "verdict " << verdict_name(rep.verdict) << "\n"
            << "iterations " << rep.iterations << "\n"
            << "relative_error " << fmt(err) << "\n"
            << "success " << (err <= s.tolerance ? 1 : 0) << "\n";
    log << "GN " << verdict_name(rep.verdict) << " after " << rep.iterations
        << " iterations, relative error " << fmt(err) << ", seed " << cfg.seed << "\n";
    if (rep.verdict == GNVerdict::SingularNormalEquations) return kExitWarning;
    if (rep.verdict == GNVerdict::Diverged) return kExitError;
    return kExitOk;
  });
}

int cmd_sweep(const Config& cfg, std::ostream& log) {
  return guarded(log, [&] {
    set_thread_count(cfg.threads);
    const SweepResult result = run_sweep(cfg.scenario);
    emit_outputs(result, cfg.output);
    log << result.algorithm << " sweep, seed " << result.seed << ", " << result.controls.size()
        << " controls\n";
    for (const RadiusSummary& r : result.summary) {
      log << "  r = " << fmt(r.radius) << ": " << r.successes << "/" << r.trials << " ("
          << fmt(r.percentage) << "%)\n";
    }
    for (const std::string& w : result.warnings) log << "warning: " << w << "\n";
    return kExitOk;
  });
}

int cmd_diagnose(const Config& cfg, std::ostream& log) {
  return guarded(log, [&] {
    const Diagnosis d = diagnose(cfg.scenario.model, cfg.scenario.op_circ, cfg.scenario.greedy.bound);
    std::ostringstream text;
    text << "family " << family_name(cfg.scenario.model.family) << "\n"
         << "dimension " << d.dim << "\n"
         << "observability_rank " << d.observability_rank << "\n"
         << "controllability_rank " << d.controllability_rank << "\n"
         << "lie_dimension " << d.lie_dimension << "\n"
         << "gramian_lambda_min " << fmt(d.gramian_lambda_min) << "\n"
         << format_checks(d.checks);
    fs::create_directories(cfg.output);
    std::ofstream(cfg.output / "diagnose.txt") << text.str();
    log << text.str();
    return d.passed() ? kExitOk : kExitWarning;
  });
}

int cmd_oracle(std::uint64_t seed, const fs::path& out, std::ostream& log) {
  return guarded(log, [&] {
    const OracleReport rep = analytic_oracle(seed);
    std::ostringstream text;
    text << format_checks(rep.checks);
    for (const std::string& o : rep.observations) text << "note " << o << "\n";
    text << "seconds " << fmt(rep.seconds) << "\n";
    if (!out.empty()) {
      fs::create_directories(out);
      std::ofstream(out / "oracle.txt") << text.str();
    }
    log << text.str();
    return rep.passed() ? kExitOk : kExitError;
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Operator identification by greedy control design and Gauss-Newton"};
  app.footer(config_reference());
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool quiet = false;
  std::string controls_dir;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory (overrides the output key)");
  app.add_option("--seed", seed, "seed override");
  app.add_option("--threads", threads, "worker threads (overrides the threads key)");
  app.add_flag("--quiet", quiet, "suppress progress output");

  auto* offline = app.add_subcommand("offline", "design controls with the configured greedy algorithm");
  auto* online = app.add_subcommand("online", "reconstruct the operator from stored controls");
  online->add_option("--controls", controls_dir, "controls directory (default: the output directory)");
  auto* sweep = app.add_subcommand("sweep", "offline design followed by a sphere-sampled GN sweep");
  auto* diag = app.add_subcommand("diagnose", "rank, Gramian and Lie-algebra hypothesis checks");
  auto* oracle = app.add_subcommand("oracle", "analytic 2x2 bilinear example");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitError;
  }

  NullBuffer null_buffer;
  std::ostream null_stream(&null_buffer);
  std::ostream& log = quiet ? null_stream : out;

  if (threads) {
    if (*threads < 0) {
      err << "error: --threads must be >= 0\n";
      return kExitError;
    }
    set_thread_count(*threads);
  }

  if (oracle->parsed()) return cmd_oracle(seed.value_or(0), out_dir, log);

  if (config_path.empty()) {
    err << "error: --config is required for this command\n";
    return kExitError;
  }
  Config cfg;
  try {
    cfg = load_config(config_path, seed);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  if (!out_dir.empty()) cfg.output = out_dir;
  if (threads) cfg.threads = *threads;

  int code = kExitError;
  if (offline->parsed()) code = cmd_offline(cfg, log);
  else if (online->parsed()) code = cmd_online(cfg, controls_dir.empty() ? cfg.output : fs::path(controls_dir), log);
  else if (sweep->parsed()) code = cmd_sweep(cfg, log);
  else if (diag->parsed()) code = cmd_diagnose(cfg, log);
  if (code == kExitError && quiet) err << "error: command failed (rerun without --quiet for details)\n";
  return code;
}

}  // namespace opid
