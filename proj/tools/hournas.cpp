// hournas: two-stage resource-constrained architecture search.
//
//   hournas <probe|propose|search|retrain|eval|synth> --config run.json
//           [--seed N] [--out DIR] [--no-vital-priori] [--sampler NAME]
//           [--tau-list 5,1,0.5,0.1]
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hournas/commands.hpp"

int main(int argc, char** argv) {
  using hournas::commands::Overrides;
  CLI::App app{"Two-stage resource-constrained neural architecture search"};
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;
  std::string out, sampler, tau_list;
  bool no_vital = false;

  for (const char* name : {"probe", "propose", "search", "retrain", "eval", "synth"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "Run configuration (JSON)")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out, "Override the output directory");
    sub->add_flag("--no-vital-priori", no_vital, "Single-stage search over all layers");
    sub->add_option("--sampler", sampler, "softmax | gumbel_softmax | gumbel_max");
    sub->add_option("--tau-list", tau_list, "Comma-separated sampling temperatures for propose");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : hournas::commands::config_error;
  }

  Overrides o;
  const auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) o.seed = seed;
  if (sub->count("--out")) o.out = out;
  if (sub->count("--sampler")) o.sampler = sampler;
  o.no_vital_priori = no_vital;
  if (sub->count("--tau-list")) {
    std::vector<double> taus;
    std::stringstream ss(tau_list);
    std::string item;
    try {
      while (std::getline(ss, item, ',')) taus.push_back(std::stod(item));
    } catch (const std::exception&) {
      std::cerr << "config error: --tau-list expects comma-separated numbers\n";
      return hournas::commands::config_error;
    }
    o.tau_list = taus;
  }
  return hournas::commands::run(sub->get_name(), config, o, std::cout, std::cerr);
}
