#include "hournas/config.hpp"

#include <fstream>

#include "hournas/json_util.hpp"
#include "hournas/space_json.hpp"

namespace hournas::config {

using jsonutil::get_or;
using jsonutil::json;
using jsonutil::require_keys;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

template <class T>
void positive(T v, const std::string& what) {
  if (!(v > T(0))) throw ConfigError(what + " must be positive");
}

space::TargetSpec target_from_json(const json& v, const std::string& where) {
  if (v.is_number()) {
    if (v.get<double>() <= 0) throw ConfigError(where + ": target must be positive");
    return {v.get<double>(), false};
  }
  if (v.is_string()) return space::parse_target(v.get<std::string>());
  throw ConfigError(where + ": target must be a number or a string like \"45%M\"");
}

}  // namespace

json RunConfig::to_json() const {
  const auto rel = [&](const std::filesystem::path& p) {
    const auto r = p.lexically_relative(base_dir);
    return (r.empty() ? p : r).generic_string();
  };
  json j;
  j["space"] = space_path ? json(rel(*space_path)) : json(nullptr);
  json d;
  if (data.synth) {
    const auto& s = *data.synth;
    d["synth"] = {{"classes", s.classes}, {"per_class", s.per_class}, {"channels", s.channels},
                  {"height", s.height},   {"width", s.width},         {"noise", s.noise},
                  {"blobs", s.blobs},     {"seed", s.seed}};
  } else {
    d["idx"] = {{"images", rel(data.idx_images)}, {"labels", rel(data.idx_labels)}};
  }
  j["data"] = d;
  json t = json::object();
  for (const auto& [o, spec] : targets)
    t[space::objective_name(o)] = spec.percent_of_max ? json(jsonutil::fixed(spec.value)) : json(spec.value);
  json tp = json::object();
  for (const auto& [o, spec] : targets) tp[space::objective_name(o)] = spec.percent_of_max;
  j["targets"] = {{"value", t}, {"percent_of_max", tp}};
  const auto& s = search;
  j["search"] = {{"epochs_vital", s.epochs_vital},
                 {"epochs_nonvital", s.epochs_nonvital},
                 {"proposal_iterations", s.proposal_iterations},
                 {"m", s.m},
                 {"alpha", s.alpha},
                 {"beta", s.beta},
                 {"lr_weights", s.lr_weights},
                 {"lr_arch", s.lr_arch},
                 {"tau0", s.tau0},
                 {"tau_decay", s.tau_decay},
                 {"batch_size", s.batch_size},
                 {"sampler", proposal::sampler_name(s.sampler)},
                 {"vital_sampler", proposal::sampler_name(s.vital_sampler)},
                 {"proposal_tau", s.proposal_tau},
                 {"proposal_draws", s.proposal_draws},
                 {"vital_priori", s.vital_priori}};
  j["train"] = {{"epochs", train.epochs},
                {"lr", train.lr},
                {"batch_size", train.batch_size},
                {"calibration_samples", train.calibration_samples}};
  j["probe"] = {{"p_levels", probe.p_levels}, {"mask_seeds", probe.mask_seeds}};
  j["propose"] = {{"tau_list", propose.tau_list}, {"samples", propose.samples}};
  j["seed"] = seed;
  j["architecture"] = architecture ? json(rel(*architecture)) : json(nullptr);
  j["checkpoint"] = checkpoint ? json(rel(*checkpoint)) : json(nullptr);
  return j;
}

std::string RunConfig::hash() const { return jsonutil::fnv1a_hex(to_json().dump()); }

RunConfig parse_config(const json& j, const std::filesystem::path& base) {
  require_keys(j,
               {"space", "data", "targets", "search", "train", "probe", "propose", "seed", "output_dir",
                "architecture", "checkpoint"},
               "config");
  RunConfig c;
  c.base_dir = base.lexically_normal();
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  if (j.contains("space") && !j["space"].is_null())
    c.space_path = resolve(base, get_or<std::string>(j, "space", "", "config"));
  c.output_dir = resolve(base, get_or<std::string>(j, "output_dir", "out", "config"));
  if (j.contains("architecture") && !j["architecture"].is_null())
    c.architecture = resolve(base, get_or<std::string>(j, "architecture", "", "config"));
  if (j.contains("checkpoint") && !j["checkpoint"].is_null())
    c.checkpoint = resolve(base, get_or<std::string>(j, "checkpoint", "", "config"));

  if (!j.contains("data")) throw ConfigError("config: missing required key 'data'");
  const auto& d = j["data"];
  require_keys(d, {"synth", "idx"}, "config.data");
  if (d.contains("synth") == d.contains("idx")) throw ConfigError("config.data: give exactly one of synth or idx");
  if (d.contains("synth")) {
    const auto& s = d["synth"];
    const std::string w = "config.data.synth";
    require_keys(s, {"classes", "per_class", "channels", "height", "width", "noise", "blobs", "seed"}, w);
    data::SynthOptions o;
    o.classes = get_or<std::size_t>(s, "classes", o.classes, w);
    o.per_class = get_or<std::size_t>(s, "per_class", o.per_class, w);
    o.channels = get_or<std::size_t>(s, "channels", o.channels, w);
    o.height = get_or<std::size_t>(s, "height", o.height, w);
    o.width = get_or<std::size_t>(s, "width", o.width, w);
    o.noise = get_or<double>(s, "noise", o.noise, w);
    o.blobs = get_or<std::size_t>(s, "blobs", o.blobs, w);
    o.seed = get_or<std::uint64_t>(s, "seed", o.seed, w);
    if (o.classes < 2) throw ConfigError(w + ".classes must be >= 2");
    positive(o.per_class, w + ".per_class");
    positive(o.channels, w + ".channels");
    positive(o.height, w + ".height");
    positive(o.width, w + ".width");
    if (!(o.noise >= 0)) throw ConfigError(w + ".noise must be >= 0");
    c.data.synth = o;
  } else {
    const auto& s = d["idx"];
    require_keys(s, {"images", "labels"}, "config.data.idx");
    c.data.idx_images = resolve(base, jsonutil::get_required<std::string>(s, "images", "config.data.idx"));
    c.data.idx_labels = resolve(base, jsonutil::get_required<std::string>(s, "labels", "config.data.idx"));
  }

  if (j.contains("targets")) {
    const auto& t = j["targets"];
    require_keys(t, {"flops", "params"}, "config.targets");
    for (auto it = t.begin(); it != t.end(); ++it)
      c.targets[space::parse_objective(it.key())] = target_from_json(it.value(), "config.targets." + it.key());
  }

  if (j.contains("search")) {
    const auto& s = j["search"];
    const std::string w = "config.search";
    require_keys(s,
                 {"epochs_vital", "epochs_nonvital", "proposal_iterations", "m", "alpha", "beta", "lr_weights",
                  "lr_arch", "tau0", "tau_decay", "batch_size", "sampler", "vital_sampler", "proposal_tau",
                  "proposal_draws", "vital_priori"},
                 w);
    auto& o = c.search;
    o.epochs_vital = get_or<std::size_t>(s, "epochs_vital", o.epochs_vital, w);
    o.epochs_nonvital = get_or<std::size_t>(s, "epochs_nonvital", o.epochs_nonvital, w);
    o.proposal_iterations = get_or<std::size_t>(s, "proposal_iterations", o.proposal_iterations, w);
    o.m = get_or<std::size_t>(s, "m", o.m, w);
    o.alpha = get_or<double>(s, "alpha", o.alpha, w);
    o.beta = get_or<double>(s, "beta", o.beta, w);
    o.lr_weights = get_or<double>(s, "lr_weights", o.lr_weights, w);
    o.lr_arch = get_or<double>(s, "lr_arch", o.lr_arch, w);
    o.tau0 = get_or<double>(s, "tau0", o.tau0, w);
    o.tau_decay = get_or<double>(s, "tau_decay", o.tau_decay, w);
    o.batch_size = get_or<std::size_t>(s, "batch_size", o.batch_size, w);
    o.sampler = proposal::parse_sampler(get_or<std::string>(s, "sampler", "gumbel_max", w));
    o.vital_sampler = proposal::parse_sampler(get_or<std::string>(s, "vital_sampler", "gumbel_softmax", w));
    o.proposal_tau = get_or<double>(s, "proposal_tau", o.proposal_tau, w);
    o.proposal_draws = get_or<std::size_t>(s, "proposal_draws", o.proposal_draws, w);
    o.vital_priori = get_or<bool>(s, "vital_priori", o.vital_priori, w);
  }
  c.search.seed = c.seed;
  c.search.validate();

  if (j.contains("train")) {
    const auto& s = j["train"];
    const std::string w = "config.train";
    require_keys(s, {"epochs", "lr", "batch_size", "calibration_samples"}, w);
    c.train.epochs = get_or<std::size_t>(s, "epochs", c.train.epochs, w);
    c.train.lr = get_or<double>(s, "lr", c.train.lr, w);
    c.train.batch_size = get_or<std::size_t>(s, "batch_size", c.train.batch_size, w);
    c.train.calibration_samples = get_or<std::size_t>(s, "calibration_samples", c.train.calibration_samples, w);
    positive(c.train.epochs, w + ".epochs");
    positive(c.train.lr, w + ".lr");
    positive(c.train.calibration_samples, w + ".calibration_samples");
    if (c.train.batch_size < 2) throw ConfigError(w + ".batch_size must be >= 2");
  }
  c.train.seed = c.seed;

  if (j.contains("probe")) {
    const auto& s = j["probe"];
    require_keys(s, {"p_levels", "mask_seeds"}, "config.probe");
    c.probe.p_levels = get_or<std::vector<double>>(s, "p_levels", c.probe.p_levels, "config.probe");
    c.probe.mask_seeds = get_or<std::size_t>(s, "mask_seeds", c.probe.mask_seeds, "config.probe");
    positive(c.probe.mask_seeds, "config.probe.mask_seeds");
    for (double p : c.probe.p_levels)
      if (!(p >= 0 && p <= 1)) throw ConfigError("config.probe.p_levels: entries must lie in [0, 1]");
  }
  if (j.contains("propose")) {
    const auto& s = j["propose"];
    require_keys(s, {"tau_list", "samples"}, "config.propose");
    c.propose.tau_list = get_or<std::vector<double>>(s, "tau_list", c.propose.tau_list, "config.propose");
    c.propose.samples = get_or<std::size_t>(s, "samples", c.propose.samples, "config.propose");
    positive(c.propose.samples, "config.propose.samples");
    for (double t : c.propose.tau_list) positive(t, "config.propose.tau_list entries");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

space::SuperNetSpec resolve_space(const RunConfig& cfg, const data::Dataset& ds) {
  space::SuperNetSpec net =
      cfg.space_path ? space::load_space(*cfg.space_path)
                     : space::default_space(ds.channels(), {ds.height(), ds.width()}, ds.class_count);
  if (net.stem.in_channels != ds.channels() || net.stem.input_resolution.height != ds.height() ||
      net.stem.input_resolution.width != ds.width())
    throw ConfigError("space input " + std::to_string(net.stem.in_channels) + "x" +
                      std::to_string(net.stem.input_resolution.height) + "x" +
                      std::to_string(net.stem.input_resolution.width) + " does not match the data");
  if (net.num_classes != ds.class_count)
    throw ConfigError("space has " + std::to_string(net.num_classes) + " classes, data has " +
                      std::to_string(ds.class_count));
  return net;
}

data::Dataset load_data(const RunConfig& cfg) {
  if (cfg.data.synth) return data::synth_dataset(*cfg.data.synth);
  return data::load_idx(cfg.data.idx_images, cfg.data.idx_labels);
}

data::Split prepare(const RunConfig& cfg, data::Dataset& ds) {
  auto split = data::split_80_20(ds, cfg.seed);
  data::normalize(ds, data::channel_stats(ds, split.train_indices));
  return split;
}

}  // namespace hournas::config
