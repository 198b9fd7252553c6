#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>

#include "opid/config.hpp"

namespace opid {

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitWarning = 2 };

/// Greedy control design. Writes the outcome into cfg.output. Returns 2
/// when the designed GN matrix is not positive definite.
int cmd_offline(const Config& cfg, std::ostream& log);
/// Gauss-Newton reconstruction from A_circ with stored controls. Returns 2
/// on singular normal equations.
int cmd_online(const Config& cfg, const std::filesystem::path& controls_dir, std::ostream& log);
int cmd_sweep(const Config& cfg, std::ostream& log);
/// Returns 2 when any hypothesis check fails.
int cmd_diagnose(const Config& cfg, std::ostream& log);
/// Returns 1 when any check of the analytic example fails. Writes
/// oracle.txt into `out` unless it is empty.
int cmd_oracle(std::uint64_t seed, const std::filesystem::path& out, std::ostream& log);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace opid
