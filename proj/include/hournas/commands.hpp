#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hournas/config.hpp"

namespace hournas::commands {

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool no_vital_priori = false;
  std::optional<std::string> sampler;
  std::optional<std::vector<double>> tau_list;
};

void apply(config::RunConfig& cfg, const Overrides& o);

/// Exit codes of the command-line tool.
enum ExitCode : int { ok = 0, config_error = 2, data_error = 3, runtime_error = 4 };

// Each command writes its outputs under cfg.output_dir and returns the main
// JSON document it wrote.
nlohmann::json cmd_search(const config::RunConfig& cfg, std::ostream& log);
nlohmann::json cmd_propose(const config::RunConfig& cfg, std::ostream& log);
nlohmann::json cmd_retrain(const config::RunConfig& cfg, std::ostream& log);
nlohmann::json cmd_eval(const config::RunConfig& cfg, std::ostream& log);
nlohmann::json cmd_probe(const config::RunConfig& cfg, std::ostream& log);
/// Writes the configured synthetic dataset as images.idx / labels.idx.
nlohmann::json cmd_synth(const config::RunConfig& cfg, std::ostream& log);

/// Loads the config, applies overrides, runs `command` and maps exceptions
/// to exit codes (messages go to `err`).
int run(const std::string& command, const std::filesystem::path& config_path, const Overrides& overrides,
        std::ostream& log, std::ostream& err);

/// Op choices of an architecture JSON (search output) in the given space.
std::vector<std::size_t> read_architecture(const std::filesystem::path& path, const space::SuperNetSpec& net);
nlohmann::json architecture_layers(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices);

}  // namespace hournas::commands
