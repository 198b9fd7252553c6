#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "opid/harness.hpp"

namespace opid {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string path;  // dotted
  std::string type;
  std::string fallback;
  std::string help;
};

/// Every accepted key. Anything else in a config document is rejected.
const std::vector<ConfigKey>& config_keys();
/// Key table as printed by --help.
std::string config_reference();

struct Config {
  Scenario scenario;
  std::filesystem::path output = "out";
  int threads = 0;
  std::uint64_t seed = 0;
};

Config parse_config(const std::string& json_text,
                    std::optional<std::uint64_t> seed_override = std::nullopt);
Config load_config(const std::filesystem::path& path,
                   std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace opid
