#include "hournas/commands.hpp"

#include <fstream>
#include <iostream>

#include "hournas/checkpoint.hpp"
#include "hournas/json_util.hpp"
#include "hournas/proposal.hpp"
#include "hournas/search.hpp"
#include "hournas/vitality.hpp"

namespace hournas::commands {

using jsonutil::fixed;
using json = nlohmann::json;

namespace {

json fixed_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(fixed(x));
  return a;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json provenance(const config::RunConfig& cfg) { return {{"config_hash", cfg.hash()}, {"seed", cfg.seed}}; }

json resources_json(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices) {
  json r = json::object();
  for (auto o : {space::Objective::flops, space::Objective::params})
    r[space::objective_name(o)] = fixed(search::architecture_cost(net, choices, o));
  return r;
}

struct Prepared {
  data::Dataset ds;
  data::Split split;
  space::SuperNetSpec net;
};

Prepared prepare(const config::RunConfig& cfg) {
  Prepared p{config::load_data(cfg), {}, {}};
  p.split = config::prepare(cfg, p.ds);
  p.net = config::resolve_space(cfg, p.ds);
  return p;
}

/// Discrete network of cfg.architecture with weights from cfg.checkpoint.
model::Network load_trained(const config::RunConfig& cfg, const space::SuperNetSpec& net) {
  if (!cfg.architecture) throw ConfigError("config: 'architecture' is required (run search first)");
  if (!cfg.checkpoint) throw ConfigError("config: 'checkpoint' is required (run retrain first)");
  if (!std::filesystem::exists(*cfg.checkpoint)) throw DataError("missing checkpoint " + cfg.checkpoint->string());
  const auto choices = read_architecture(*cfg.architecture, net);
  Rng rng(cfg.seed);
  model::Network model(model::discrete_spec(net, choices), rng);
  load_network(*cfg.checkpoint, model);
  return model;
}

}  // namespace

void apply(config::RunConfig& cfg, const Overrides& o) {
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.search.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (o.out) cfg.output_dir = *o.out;
  if (o.no_vital_priori) cfg.search.vital_priori = false;
  if (o.sampler) cfg.search.sampler = proposal::parse_sampler(*o.sampler);
  if (o.tau_list) {
    for (double t : *o.tau_list)
      if (!(t > 0)) throw ConfigError("--tau-list entries must be positive");
    cfg.propose.tau_list = *o.tau_list;
  }
}

json architecture_layers(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices) {
  const auto names = model::block_names(net);
  json layers = json::array();
  for (std::size_t l = 0; l < choices.size(); ++l)
    layers.push_back({{"name", names[l + 1]}, {"chosen_op", net.layers[l].candidates.at(choices[l]).name()}});
  return layers;
}

std::vector<std::size_t> read_architecture(const std::filesystem::path& path, const space::SuperNetSpec& net) {
  if (!std::filesystem::exists(path)) throw DataError("missing architecture file " + path.string());
  const json j = read_json(path);
  if (!j.contains("layers") || !j["layers"].is_array()) throw DataError(path.string() + ": no 'layers' array");
  const auto& layers = j["layers"];
  if (layers.size() != net.num_layers())
    throw ConfigError(path.string() + ": " + std::to_string(layers.size()) + " layers, space has " +
                      std::to_string(net.num_layers()));
  std::vector<std::size_t> choices;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto op = layers[l].value("chosen_op", std::string());
    const auto& cands = net.layers[l].candidates;
    std::size_t found = cands.size();
    for (std::size_t o = 0; o < cands.size() && found == cands.size(); ++o)
      if (cands[o].allowed() && cands[o].name() == op) found = o;
    if (found == cands.size())
      throw ConfigError(path.string() + ": layer " + std::to_string(l) + " op '" + op + "' is not a candidate");
    choices.push_back(found);
  }
  return choices;
}

json cmd_search(const config::RunConfig& cfg, std::ostream& log) {
  if (cfg.targets.empty()) throw ConfigError("config: search needs 'targets'");
  auto p = prepare(cfg);
  auto sc = cfg.search;
  sc.checkpoint_dir = cfg.output_dir / "checkpoints";
  log << "search: " << p.net.num_layers() << " layers, " << p.net.num_ops() << " ops, "
      << (sc.vital_priori ? "two-stage" : "single-stage") << ", sampler " << proposal::sampler_name(sc.sampler)
      << "\n";
  const auto res = search::run_search(p.net, p.ds, p.split, cfg.targets, sc);

  json targets = json::object();
  for (const auto& [o, v] : res.targets) targets[space::objective_name(o)] = fixed(v);
  json vital = json::array();
  for (auto l : res.state.vital_layers) vital.push_back(l);
  json out = {{"layers", architecture_layers(p.net, res.choices)},
              {"choices", res.choices},
              {"resources", resources_json(p.net, res.choices)},
              {"targets", targets},
              {"vital_layers", vital},
              {"vital_priori", sc.vital_priori},
              {"config", cfg.to_json()},
              {"loss_traces",
               {{"train", fixed_array(res.state.train_loss_trace)},
                {"val", fixed_array(res.state.val_loss_trace)},
                {"resource", fixed_array(res.state.resource_trace)}}}};
  out.update(provenance(cfg));
  write_json(cfg.output_dir / "architecture.json", out);
  log << "search: resources " << out["resources"].dump() << " targets " << targets.dump() << "\n";
  return out;
}

json cmd_propose(const config::RunConfig& cfg, std::ostream& log) {
  if (cfg.targets.empty()) throw ConfigError("config: propose needs 'targets'");
  auto p = prepare(cfg);
  const auto table = space::build_resource_table(p.net, cfg.targets);
  proposal::FitOptions fit;
  fit.m = cfg.search.m;
  fit.iterations = cfg.search.proposal_iterations;
  fit.beta = cfg.search.beta;
  fit.alpha = cfg.search.alpha;
  fit.tau = cfg.search.proposal_tau;
  fit.draws = cfg.search.proposal_draws;
  Rng rng(cfg.seed);
  const auto set = proposal::optimize_proposals(table, fit, rng);
  json out = proposal::to_json(set, table);
  out.update(provenance(cfg));

  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream csv(cfg.output_dir / "scatter.csv");
  if (!csv) throw DataError("cannot write scatter.csv");
  csv << "tau";
  for (auto o : table.objectives) csv << "," << space::objective_name(o);
  csv << "\n";
  json within = json::object();
  char buf[64];
  for (double tau : cfg.propose.tau_list) {
    Rng srng(cfg.seed + 1);
    const auto costs = proposal::sample_costs(set, table, tau, cfg.propose.samples, srng);
    for (Eigen::Index s = 0; s < costs.rows(); ++s) {
      std::snprintf(buf, sizeof buf, "%g", tau);
      csv << buf;
      for (Eigen::Index i = 0; i < costs.cols(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.10g", costs(s, i));
        csv << buf;
      }
      csv << "\n";
    }
    std::snprintf(buf, sizeof buf, "%g", tau);
    within[buf] = fixed(proposal::fraction_within(costs, table, 0.1));
  }
  out["fraction_within_10pct"] = within;
  write_json(cfg.output_dir / "proposals.json", out);
  log << "propose: m=" << set.m() << " final objective " << set.objective_trace.back() << ", within +-10%: "
      << within.dump() << "\n";
  return out;
}

json cmd_retrain(const config::RunConfig& cfg, std::ostream& log) {
  if (!cfg.architecture) throw ConfigError("config: retrain needs 'architecture' (run search first)");
  auto p = prepare(cfg);
  const auto choices = read_architecture(*cfg.architecture, p.net);
  const auto r = search::retrain(p.net, choices, p.ds, p.split, cfg.train);
  std::filesystem::create_directories(cfg.output_dir);
  save_network(cfg.output_dir / "model.ckpt", *r.network);
  json out = {{"accuracy", fixed(r.accuracy)},
              {"layers", architecture_layers(p.net, choices)},
              {"resources", resources_json(p.net, choices)},
              {"parameter_count", r.network->parameter_count()},
              {"loss_trace", fixed_array(r.loss_trace)},
              {"checkpoint", "model.ckpt"}};
  out.update(provenance(cfg));
  write_json(cfg.output_dir / "retrain.json", out);
  log << "retrain: validation accuracy " << r.accuracy << "\n";
  return out;
}

json cmd_eval(const config::RunConfig& cfg, std::ostream& log) {
  auto p = prepare(cfg);
  auto model = load_trained(cfg, p.net);
  const double acc = vitality::accuracy(model, p.ds.subset(p.split.val_indices));
  json out = {{"accuracy", fixed(acc)}, {"checkpoint", cfg.checkpoint->generic_string()}};
  out.update(provenance(cfg));
  write_json(cfg.output_dir / "eval.json", out);
  log << "eval: validation accuracy " << acc << "\n";
  return out;
}

json cmd_probe(const config::RunConfig& cfg, std::ostream& log) {
  auto p = prepare(cfg);
  auto model = load_trained(cfg, p.net);
  vitality::ProbeOptions opt;
  opt.p_levels = cfg.probe.p_levels;
  opt.mask_seeds = cfg.probe.mask_seeds;
  opt.seed = cfg.seed;
  const auto report = vitality::probe_importance(model, p.ds.subset(p.split.val_indices), opt);
  std::filesystem::create_directories(cfg.output_dir);
  vitality::write_probe_csv(cfg.output_dir / "probe.csv", report);
  json out = vitality::probe_plot_json(report);
  out.update(provenance(cfg));
  write_json(cfg.output_dir / "probe_plot.json", out);
  log << "probe: baseline " << report.baseline_accuracy << ", " << report.rows.size() << " masked evaluations\n";
  return out;
}

json cmd_synth(const config::RunConfig& cfg, std::ostream& log) {
  if (!cfg.data.synth) throw ConfigError("config: synth needs data.synth");
  const auto ds = data::synth_dataset(*cfg.data.synth);
  const auto [img, lab] = data::to_idx(ds);
  std::filesystem::create_directories(cfg.output_dir);
  data::write_idx(cfg.output_dir / "images.idx", img);
  data::write_idx(cfg.output_dir / "labels.idx", lab);
  json out = {{"samples", ds.size()}, {"classes", ds.class_count}, {"images", "images.idx"}, {"labels", "labels.idx"}};
  out.update(provenance(cfg));
  write_json(cfg.output_dir / "synth.json", out);
  log << "synth: wrote " << ds.size() << " samples\n";
  return out;
}

int run(const std::string& command, const std::filesystem::path& config_path, const Overrides& overrides,
        std::ostream& log, std::ostream& err) {
  try {
    auto cfg = config::load_config(config_path);
    apply(cfg, overrides);
    if (command == "search") cmd_search(cfg, log);
    else if (command == "propose") cmd_propose(cfg, log);
    else if (command == "retrain") cmd_retrain(cfg, log);
    else if (command == "eval") cmd_eval(cfg, log);
    else if (command == "probe") cmd_probe(cfg, log);
    else if (command == "synth") cmd_synth(cfg, log);
    else throw ConfigError("unknown command '" + command + "'");
    return ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return data_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return runtime_error;
  }
}

}  // namespace hournas::commands
