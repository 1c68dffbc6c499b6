#pragma once

#include <filesystem>

#include <json.hpp>

#include "hournas/search_space.hpp"

namespace hournas::space {

/// Search-space definition file (schema in docs/formats.md):
///
///   { "input":  {"channels": 1, "height": 12, "width": 12},
///     "stem":   {"out_ch": 8, "kernel": 3, "stride": 1},
///     "catalog": [ {"kind": "mbconv", "kernel": 3, "expansion": 6, "groups": 1},
///                  {"kind": "skip"} ],
///     "layers": [ {"in_ch": 8, "out_ch": 16, "stride": 2, "candidates": [...]} ],
///     "head":   {},
///     "num_classes": 10 }
///
/// `catalog` and per-layer `candidates` are optional (default catalog).
/// Unknown keys are rejected.
SuperNetSpec space_from_json(const nlohmann::json& j);
nlohmann::json space_to_json(const SuperNetSpec& net);
SuperNetSpec load_space(const std::filesystem::path& path);

OpSpec op_from_json(const nlohmann::json& j);
nlohmann::json op_to_json(const OpSpec& op);

}  // namespace hournas::space
