#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "opid/config.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "opid_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run(const std::string& args) {
  static int counter = 0;
  const fs::path log = work_dir() / ("log_" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(OPID_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = work_dir() / (name + ".json");
  std::ofstream(p) << text;
  return p;
}

const char* kExplicitDrift = R"({
  "model": {"family": "linear_drift", "horizon": 1.0, "steps": 200,
            "B": [[1, 0], [0.5, 1]], "C": [[1, 0.2], [0, 1]]},
  "unknown": {"A_star": [[-0.5, 1.0], [-1.0, -0.3]], "A_circ": [[-0.5, 1.0], [-1.0, -0.3]]},
  "algorithm": {"name": "LGR"},
  "optimizer": {"multistart": 1},
  "sweep": {"radii": [0.0, 0.05], "trials": 3}
})";

std::size_t count_csv(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".csv";
  return n;
}

}  // namespace

TEST(Cli, HelpListsEveryConfigKey) {
  const CliResult r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const opid::ConfigKey& k : opid::config_keys()) {
    EXPECT_NE(r.out.find(k.path), std::string::npos) << k.path;
  }
  for (const char* sub : {"offline", "online", "sweep", "diagnose", "oracle"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, InvalidConfigsExitOne) {
  EXPECT_EQ(run("offline").code, 1);
  EXPECT_EQ(run("offline --config " + (work_dir() / "missing.json").string()).code, 1);
  EXPECT_EQ(run("offline --config " + write_config("malformed", "{\"model\": ").string()).code, 1);
  const CliResult unknown = run("offline --config " + write_config("unknown", R"({"modle": {}})").string());
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.out.find("modle"), std::string::npos);
  EXPECT_EQ(run("offline --config " +
                write_config("mistyped", R"({"sweep": {"trials": "many"}})").string())
                .code,
            1);
  EXPECT_EQ(run("offline --config " +
                write_config("inapplicable", R"({"model": {"family": "linear_drift", "y0": [1, 0, 0]}})")
                    .string())
                .code,
            1);
  EXPECT_EQ(run("bogus").code, 1);
}

TEST(Cli, OfflineWritesOneControlPerElement) {
  const fs::path out = work_dir() / "offline3";
  const fs::path cfg = write_config(
      "drift3", R"({"model": {"dim": 3, "inputs": 3, "outputs": 3, "steps": 200},
                   "optimizer": {"multistart": 1}})");
  const CliResult r = run("offline --config " + cfg.string() + " --out " + out.string() + " --seed 7");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_csv(out / "controls"), 9u);
  for (const char* f : {"basis_order.txt", "selected_basis.json", "greedy_log.txt",
                        "offline_summary.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_NE(slurp(out / "offline_summary.txt").find("seed 7\n"), std::string::npos);

  const CliResult online = run("online --config " + cfg.string() + " --out " + out.string() + " --seed 7");
  EXPECT_EQ(online.code, 0) << online.out;
  const std::string summary = slurp(out / "online_summary.txt");
  EXPECT_NE(summary.find("success 1"), std::string::npos) << summary;
  EXPECT_TRUE(fs::exists(out / "gn_report.txt"));
  EXPECT_TRUE(fs::exists(out / "gn_iterates.csv"));
}

TEST(Cli, OnlineAtTruthConvergesImmediately) {
  const fs::path out = work_dir() / "explicit";
  const fs::path cfg = write_config("explicit", kExplicitDrift);
  ASSERT_EQ(run("offline --config " + cfg.string() + " --out " + out.string()).code, 0);
  const fs::path elsewhere = work_dir() / "explicit_online";
  const CliResult r = run("online --config " + cfg.string() + " --out " + elsewhere.string() +
                    " --controls " + (out / "controls").string());
  EXPECT_EQ(r.code, 0) << r.out;
  const std::string summary = slurp(elsewhere / "online_summary.txt");
  EXPECT_NE(summary.find("verdict converged"), std::string::npos) << summary;
  EXPECT_NE(summary.find("iterations 0"), std::string::npos) << summary;
}

TEST(Cli, OnlineWithoutControlsExitsOne) {
  const fs::path cfg = write_config("explicit_missing", kExplicitDrift);
  EXPECT_EQ(run("online --config " + cfg.string() + " --controls " +
                (work_dir() / "no_such_dir").string())
                .code,
            1);
}

TEST(Cli, ZeroObserverWarns) {
  std::string text = kExplicitDrift;
  text.replace(text.find("[[1, 0.2], [0, 1]]"), 18, "[[0, 0], [0, 0]]");
  const fs::path cfg = write_config("zero_c", text);
  const fs::path out = work_dir() / "zero_c";
  EXPECT_EQ(run("offline --config " + cfg.string() + " --out " + out.string()).code, 2);
  EXPECT_NE(slurp(out / "offline_summary.txt").find("positive_definite 0"), std::string::npos);
  const CliResult d = run("diagnose --config " + cfg.string() + " --out " + out.string());
  EXPECT_EQ(d.code, 2);
  EXPECT_NE(d.out.find("FAIL observability rank"), std::string::npos) << d.out;
}

TEST(Cli, DiagnosePassesOnIdentifiableModel) {
  const fs::path cfg = write_config("diag_ok", kExplicitDrift);
  const fs::path out = work_dir() / "diag_ok";
  const CliResult d = run("diagnose --config " + cfg.string() + " --out " + out.string());
  EXPECT_EQ(d.code, 0) << d.out;
  EXPECT_TRUE(fs::exists(out / "diagnose.txt"));
}

TEST(Cli, OracleAndQuiet) {
  const fs::path out = work_dir() / "oracle";
  const CliResult r = run("oracle --out " + out.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(out / "oracle.txt"));
  const CliResult q = run("--quiet oracle");
  EXPECT_EQ(q.code, 0);
  EXPECT_TRUE(q.out.empty()) << q.out;
}

TEST(Cli, SweepIsDeterministic) {
  const fs::path cfg = write_config("sweep", kExplicitDrift);
  const fs::path a = work_dir() / "sweep_a", b = work_dir() / "sweep_b";
  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + a.string() + " --seed 3").code, 0);
  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + b.string() + " --seed 3 --threads 1")
                .code,
            0);
  const std::string sa = slurp(a / "sweep.csv");
  EXPECT_EQ(sa, slurp(b / "sweep.csv"));
  EXPECT_EQ(slurp(a / "trials.csv"), slurp(b / "trials.csv"));
  EXPECT_EQ(sa.substr(0, sa.find('\n')), "radius,trials,successes,percentage");
  for (const char* f : {"report.txt", "plot_sweep.py"}) EXPECT_TRUE(fs::exists(a / f)) << f;
}
