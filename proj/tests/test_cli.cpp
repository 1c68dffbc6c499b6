#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "hournas/commands.hpp"
#include "hournas/config.hpp"

using namespace hournas;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = HOURNAS_SOURCE_DIR;
const fs::path kBundled = kSource / "assets" / "tiny";

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hournas_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Runs the command-line tool; stdout and stderr go to <dir>/log.txt.
int cli(const std::string& args, const fs::path& dir) {
  const std::string cmd =
      std::string("\"") + HOURNAS_CLI_PATH + "\" " + args + " > \"" + (dir / "log.txt").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json small_config() {
  return {{"data", {{"synth", {{"classes", 3}, {"per_class", 30}, {"height", 8}, {"width", 8}, {"seed", 2}}}}},
          {"targets", {{"flops", "50%M"}, {"params", "50%M"}}},
          {"search", {{"m", 2}, {"proposal_iterations", 100}, {"proposal_draws", 8}}},
          {"propose", {{"samples", 200}}},
          {"train", {{"epochs", 1}}},
          {"seed", 3}};
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("cli") {
TEST_CASE("exit codes") {
  const auto dir = scratch("exit");
  CHECK(cli("search", dir) == commands::config_error);
  CHECK(cli("frobnicate --config x.json", dir) == commands::config_error);
  CHECK(cli("search --config " + (dir / "absent.json").string(), dir) == commands::config_error);

  auto j = small_config();
  j["serach"] = json::object();
  CHECK(cli("search --config " + write_config(dir, j).string(), dir) == commands::config_error);
  CHECK(slurp(dir / "log.txt").find("serach") != std::string::npos);

  j = small_config();
  j["search"]["tau_decay"] = 1.5;
  CHECK(cli("search --config " + write_config(dir, j).string(), dir) == commands::config_error);

  j = small_config();
  j["data"] = {{"idx", {{"images", "none.idx"}, {"labels", "none.idx"}}}};
  CHECK(cli("search --config " + write_config(dir, j).string(), dir) == commands::data_error);

  j = small_config();
  j["architecture"] = "arch.json";
  j["checkpoint"] = "missing.ckpt";
  CHECK(cli("eval --config " + write_config(dir, j).string(), dir) == commands::data_error);

  j = small_config();
  CHECK(cli("propose --config " + write_config(dir, j).string() + " --tau-list 1,x", dir) ==
        commands::config_error);
  CHECK(cli("propose --config " + write_config(dir, j).string() + " --sampler nope", dir) ==
        commands::config_error);
}

TEST_CASE("unknown keys are rejected at every level") {
  for (const char* path : {"/bogus", "/data/synth/bogus", "/search/bogus", "/train/bogus", "/probe/bogus"}) {
    auto j = small_config();
    j[json::json_pointer(path)] = 1;
    CHECK_THROWS_AS(config::parse_config(j), ConfigError);
  }
  CHECK_NOTHROW(config::parse_config(small_config()));
}

TEST_CASE("eval reproduces the bundled checkpoint's accuracy") {
  const auto dir = scratch("eval");
  REQUIRE(fs::exists(kBundled / "model.ckpt"));
  REQUIRE(cli("eval --config " + (kBundled / "config.json").string() + " --out " + dir.string(), dir) == 0);
  const auto recorded = read_json(kBundled / "retrain.json");
  const auto eval = read_json(dir / "eval.json");
  CHECK(eval["accuracy"] == recorded["accuracy"]);
  CHECK(eval["config_hash"] == recorded["config_hash"]);
}

TEST_CASE("probe on the bundled checkpoint") {
  const auto a = scratch("probe_a"), b = scratch("probe_b");
  const auto cfg = config::load_config(kBundled / "config.json");
  const auto arch = read_json(kBundled / "architecture.json");
  const std::size_t blocks = arch["layers"].size() + 2;
  REQUIRE(cli("probe --config " + (kBundled / "config.json").string() + " --out " + a.string(), a) == 0);
  REQUIRE(cli("probe --config " + (kBundled / "config.json").string() + " --out " + b.string(), b) == 0);

  const auto csv = slurp(a / "probe.csv");
  // Header, baseline, then one row per block and p level.
  CHECK(cfg.probe.p_levels == std::vector<double>{0.3, 0.6, 1.0});
  CHECK(line_count(csv) == 1 + 1 + blocks * 3);
  CHECK(csv == slurp(b / "probe.csv"));
  CHECK(slurp(a / "probe_plot.json") == slurp(b / "probe_plot.json"));
}

TEST_CASE("propose: temperatures and the single-proposal penalty") {
  const auto dir = scratch("propose");
  auto j = small_config();
  j["search"]["m"] = 1;
  const auto cfg = write_config(dir, j);
  REQUIRE(cli("propose --config " + cfg.string() + " --out " + (dir / "a").string(), dir) == 0);
  const auto out = read_json(dir / "a" / "proposals.json");
  CHECK(out["m"] == 1);
  CHECK(!out["penalty_trace"].empty());
  for (const auto& v : out["penalty_trace"]) CHECK(v.get<double>() == 0.0);
  std::vector<std::string> taus;
  for (auto it = out["fraction_within_10pct"].begin(); it != out["fraction_within_10pct"].end(); ++it)
    taus.push_back(it.key());
  std::sort(taus.begin(), taus.end());
  CHECK(taus == std::vector<std::string>{"0.1", "0.5", "1", "5"});
  CHECK(line_count(slurp(dir / "a" / "scatter.csv")) == 1 + 4 * 200);

  REQUIRE(cli("propose --config " + cfg.string() + " --out " + (dir / "b").string() + " --tau-list 2,0.2", dir) ==
          0);
  const auto over = read_json(dir / "b" / "proposals.json");
  CHECK(over["fraction_within_10pct"].size() == 2);
  CHECK(over["fraction_within_10pct"].contains("0.2"));
  CHECK(over["thetas"] == out["thetas"]);
}

TEST_CASE("search is reproducible and honours --no-vital-priori") {
  const auto dir = scratch("search");
  const auto cfg = write_config(dir, small_config());
  REQUIRE(cli("search --config " + cfg.string() + " --out " + (dir / "a").string(), dir) == 0);
  REQUIRE(cli("search --config " + cfg.string() + " --out " + (dir / "b").string(), dir) == 0);
  const auto a = slurp(dir / "a" / "architecture.json");
  CHECK(a == slurp(dir / "b" / "architecture.json"));
  const auto arch = json::parse(a);
  CHECK(arch["vital_priori"] == true);
  CHECK(!arch["vital_layers"].empty());
  CHECK(arch.contains("config_hash"));
  CHECK(arch["seed"] == 3);

  REQUIRE(cli("search --config " + cfg.string() + " --out " + (dir / "c").string() + " --no-vital-priori", dir) ==
          0);
  const auto flat = read_json(dir / "c" / "architecture.json");
  CHECK(flat["vital_priori"] == false);
  CHECK(flat["vital_layers"].empty());
  CHECK(flat["config_hash"] != arch["config_hash"]);

  REQUIRE(cli("search --config " + cfg.string() + " --out " + (dir / "d").string() + " --seed 4", dir) == 0);
  CHECK(read_json(dir / "d" / "architecture.json")["seed"] == 4);
}
}  // TEST_SUITE
