#include "hournas/space_json.hpp"

#include <fstream>

#include "hournas/json_util.hpp"

namespace hournas::space {

using jsonutil::get_or;
using jsonutil::get_required;
using jsonutil::json;
using jsonutil::require_keys;

OpSpec op_from_json(const json& j) {
  require_keys(j, {"kind", "kernel", "expansion", "groups"}, "space.op");
  const auto kind = get_required<std::string>(j, "kind", "space.op");
  if (kind == "skip") return OpSpec::skip();
  if (kind == "disallowed") return OpSpec::disallowed();
  if (kind != "mbconv") throw ConfigError("space.op: unknown kind '" + kind + "'");
  return OpSpec::mbconv(get_required<std::size_t>(j, "kernel", "space.op"),
                        get_required<std::size_t>(j, "expansion", "space.op"),
                        get_or<std::size_t>(j, "groups", 1, "space.op"));
}

json op_to_json(const OpSpec& op) {
  switch (op.kind) {
    case OpKind::skip:
      return {{"kind", "skip"}};
    case OpKind::disallowed:
      return {{"kind", "disallowed"}};
    case OpKind::mbconv:
      return {{"kind", "mbconv"}, {"kernel", op.kernel}, {"expansion", op.expansion}, {"groups", op.groups}};
  }
  return {};
}

namespace {

std::vector<OpSpec> ops_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of ops");
  std::vector<OpSpec> ops;
  for (const auto& o : j) ops.push_back(op_from_json(o));
  return ops;
}

}  // namespace

SuperNetSpec space_from_json(const json& j) {
  require_keys(j, {"input", "stem", "catalog", "layers", "head", "num_classes"}, "space");
  if (!j.contains("input")) throw ConfigError("space: missing required key 'input'");
  const json& in = j.at("input");
  require_keys(in, {"channels", "height", "width"}, "space.input");
  StemSpec stem;
  stem.in_channels = get_required<std::size_t>(in, "channels", "space.input");
  stem.input_resolution = {get_required<std::size_t>(in, "height", "space.input"),
                           get_required<std::size_t>(in, "width", "space.input")};
  if (!j.contains("stem")) throw ConfigError("space: missing required key 'stem'");
  const json& s = j.at("stem");
  require_keys(s, {"out_ch", "kernel", "stride"}, "space.stem");
  stem.out_channels = get_required<std::size_t>(s, "out_ch", "space.stem");
  stem.kernel = get_or<std::size_t>(s, "kernel", 3, "space.stem");
  stem.stride = get_or<std::size_t>(s, "stride", 1, "space.stem");

  const auto catalog = j.contains("catalog") ? ops_from_json(j.at("catalog"), "space.catalog") : default_catalog();
  if (!j.contains("layers") || !j.at("layers").is_array()) throw ConfigError("space: 'layers' must be an array");
  std::vector<LayerPlan> plans;
  for (const auto& l : j.at("layers")) {
    const std::string where = "space.layers[" + std::to_string(plans.size()) + "]";
    require_keys(l, {"in_ch", "out_ch", "stride", "candidates"}, where);
    LayerPlan p{get_required<std::size_t>(l, "in_ch", where), get_required<std::size_t>(l, "out_ch", where),
                get_or<std::size_t>(l, "stride", 1, where), std::nullopt};
    if (l.contains("candidates")) p.candidates = ops_from_json(l.at("candidates"), where + ".candidates");
    plans.push_back(std::move(p));
  }
  if (j.contains("head")) require_keys(j.at("head"), {}, "space.head");
  return make_supernet(stem, plans, catalog, get_required<std::size_t>(j, "num_classes", "space"));
}

json space_to_json(const SuperNetSpec& net) {
  json layers = json::array();
  for (const auto& l : net.layers) {
    json cands = json::array();
    for (const auto& op : l.candidates) cands.push_back(op_to_json(op));
    layers.push_back({{"in_ch", l.in_channels}, {"out_ch", l.out_channels}, {"stride", l.stride}, {"candidates", cands}});
  }
  return {
      {"input",
       {{"channels", net.stem.in_channels},
        {"height", net.stem.input_resolution.height},
        {"width", net.stem.input_resolution.width}}},
      {"stem", {{"out_ch", net.stem.out_channels}, {"kernel", net.stem.kernel}, {"stride", net.stem.stride}}},
      {"layers", layers},
      {"head", json::object()},
      {"num_classes", net.num_classes},
  };
}

SuperNetSpec load_space(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("space file not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("space file " + path.string() + ": " + e.what());
  }
  return space_from_json(j);
}

}  // namespace hournas::space
