#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hournas/data.hpp"
#include "hournas/search.hpp"
#include "hournas/search_space.hpp"

namespace hournas::config {

/// Where the images come from: a synthetic recipe or an IDX pair.
struct DataSpec {
  std::optional<data::SynthOptions> synth;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;
};

struct ProbeSpec {
  std::vector<double> p_levels{0.3, 0.6, 1.0};
  std::size_t mask_seeds = 5;
};

struct ProposeSpec {
  std::vector<double> tau_list{5.0, 1.0, 0.5, 0.1};
  std::size_t samples = 10000;
};

/// Run configuration; schema in docs/config.md. Relative paths are resolved
/// against the directory of the config file.
struct RunConfig {
  std::optional<std::filesystem::path> space_path;  // default space when absent
  DataSpec data;
  std::map<space::Objective, space::TargetSpec> targets;
  search::SearchConfig search;
  search::TrainConfig train;
  ProbeSpec probe;
  ProposeSpec propose;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> architecture;  // retrain / eval / probe input
  std::optional<std::filesystem::path> checkpoint;    // eval / probe input
  std::filesystem::path base_dir = ".";               // directory of the config file

  /// Canonical JSON (every field, defaults filled in; file paths relative to
  /// base_dir and the output directory left out, so moving a run keeps its
  /// hash); hashed for provenance.
  nlohmann::json to_json() const;
  std::string hash() const;
};

/// Parses and validates; throws ConfigError on unknown keys, wrong types or
/// invalid values.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);

/// Space of the run: the space file, or the default space shaped for the data.
space::SuperNetSpec resolve_space(const RunConfig& cfg, const data::Dataset& ds);

/// Loads or generates the dataset.
data::Dataset load_data(const RunConfig& cfg);

/// Split of the run (seeded by cfg.seed) with the images renormalized on the
/// train statistics.
data::Split prepare(const RunConfig& cfg, data::Dataset& ds);

}  // namespace hournas::config
