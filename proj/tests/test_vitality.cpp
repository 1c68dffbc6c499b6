#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "hournas/checkpoint.hpp"
#include "hournas/vitality.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace hournas;
using namespace hournas::vitality;

namespace {

space::SuperNetSpec strided(const std::vector<std::size_t>& strides, std::size_t ch = 8) {
  std::vector<space::LayerPlan> plans;
  for (auto s : strides) plans.push_back({ch, ch, s, std::nullopt});
  return space::make_supernet({1, ch, 3, 1, {16, 16}}, plans, {space::OpSpec::mbconv(3, 1), space::OpSpec::skip()},
                              2);
}

std::set<std::size_t> all_blocks(std::size_t layers) {
  std::set<std::size_t> s;
  for (std::size_t b = 0; b < layers + 2; ++b) s.insert(b);
  return s;
}

}  // namespace

TEST_SUITE("vitality") {

TEST_CASE("path counts") {
  CHECK(enumerate_paths(block_graph(std::vector<bool>(4, false))).size() == 1);
  CHECK(enumerate_paths(block_graph(std::vector<bool>{true, false, true, true})).size() == 8);
  CHECK(enumerate_paths(block_graph(std::vector<bool>(10, true))).size() == 1024);
  CHECK_THROWS_AS(enumerate_paths(block_graph(std::vector<bool>(21, true))), Error);

  // Every path starts at the source, ends at the sink and is distinct.
  const auto g = block_graph(std::vector<bool>{true, true, false, true});
  g.validate();
  const auto paths = enumerate_paths(g);
  std::set<Path> unique(paths.begin(), paths.end());
  CHECK(unique.size() == paths.size());
  for (const auto& p : paths) {
    CHECK(p.front() == g.source);
    CHECK(p.back() == g.sink);
  }
}

TEST_CASE("intersection on hand-built topologies") {
  auto chain = vital_by_intersection(block_graph(std::vector<bool>(5, false)));
  CHECK(chain.blocks == all_blocks(5));

  auto one = vital_by_intersection(block_graph(std::vector<bool>{false, true, false}));
  CHECK(one.blocks == std::set<std::size_t>{0, 1, 3, 4});
}

TEST_CASE("rule on hand-built spaces") {
  auto v = vital_by_rule(strided({2, 1, 1, 2, 1}));
  CHECK(v.vital_layers() == std::vector<std::size_t>{0, 3});
  CHECK(v.blocks == std::set<std::size_t>{0, 1, 4, 6});
  CHECK(v.nonvital_layers() == std::vector<std::size_t>{1, 2, 4});

  auto flat = vital_by_rule(strided({1, 1, 1, 1}));
  CHECK(flat.blocks == std::set<std::size_t>{0, 5});
}

TEST_CASE("rule equals intersection") {
  const auto def = space::default_space(1, {12, 12}, 4);
  CHECK(vital_by_rule(def) == vital_by_intersection(block_graph(def)));
  CHECK(vital_by_rule(strided({2, 1, 1, 2, 1})) == vital_by_intersection(block_graph(strided({2, 1, 1, 2, 1}))));

  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto net = hournas::testing::random_serial_space(rng);
    const auto g = block_graph(net);
    CHECK(g.residual_blocks <= 12);
    CHECK(vital_by_rule(net) == vital_by_intersection(g));
  }
}

TEST_CASE("channel masks") {
  Rng rng(22);
  for (auto v : draw_channel_mask(64, 0.0, rng)) CHECK(v == 1);
  for (auto v : draw_channel_mask(64, 1.0, rng)) CHECK(v == 0);
  CHECK_THROWS_AS(draw_channel_mask(4, -0.1, rng), ConfigError);
  CHECK_THROWS_AS(draw_channel_mask(4, 1.5, rng), ConfigError);

  const std::size_t n = 10000;
  for (double p : {0.3, 0.6}) {
    const auto m = draw_channel_mask(n, p, rng);
    double zeros = 0;
    for (auto v : m) zeros += v == 0;
    const double sigma = std::sqrt(n * p * (1 - p));
    CHECK(std::abs(zeros - n * p) < 3 * sigma);
  }

  Tensor y = hournas::testing::randn({3, 6, 2, 2}, rng);
  Rng r0(5);
  auto same = mask_channels(y, 0.0, r0);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(same.data()[i] == y.data()[i]);

  Rng r1(6), r2(6), r3(6);
  auto once = mask_channels(y, 0.5, r1);
  auto twice = mask_channels(mask_channels(y, 0.5, r2), 0.5, r3);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(once.data()[i] == twice.data()[i]);

  // One draw per channel, shared by every sample.
  for (std::size_t c = 0; c < 6; ++c) {
    const bool zeroed = once.data()[c * 4] == 0;
    for (std::size_t nidx = 0; nidx < 3; ++nidx)
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t i = (nidx * 6 + c) * 4 + k;
        CHECK(once.data()[i] == (zeroed ? 0 : y.data()[i]));
      }
  }
}

TEST_CASE("probe on a trained residual net") {
  auto t = hournas::testing::trained_residual_net(60, 0.5, 2);
  const auto eval = t.ds.subset(t.split.val_indices);
  const auto before = network_state(*t.net);

  ProbeOptions opt;
  opt.p_levels = {0.0, 0.3, 1.0};
  opt.mask_seeds = 2;
  const auto report = probe_importance(*t.net, eval, opt);
  CHECK(report.rows.size() == t.net->num_blocks() * 3);
  CHECK(report.baseline_accuracy == accuracy(*t.net, eval));
  for (const auto& r : report.rows)
    if (r.p == 0.0) CHECK(r.accuracy == report.baseline_accuracy);

  // Head masked at p = 1: all logits tie, argmax picks class 0.
  double class0 = 0;
  for (int l : eval.labels) class0 += l == 0;
  class0 /= double(eval.size());
  const std::size_t head = t.net->num_blocks() - 1;
  for (const auto& r : report.rows)
    if (r.block == head && r.p == 1.0) CHECK(r.accuracy == doctest::Approx(class0).epsilon(1e-12));

  // Vitality flags follow the rule.
  const auto vital = vital_by_rule(t.space);
  for (const auto& r : report.rows) CHECK(r.vital == vital.is_vital_block(r.block));

  // The model is only read.
  const auto after = network_state(*t.net);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].first == after[i].first);
    const auto a = before[i].second.data(), b = after[i].second.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }

  // Same seed, same report.
  const auto again = probe_importance(*t.net, eval, opt);
  for (std::size_t i = 0; i < again.rows.size(); ++i) CHECK(again.rows[i].accuracy == report.rows[i].accuracy);

  const auto dir = std::filesystem::temp_directory_path() / "hournas_probe_test";
  std::filesystem::create_directories(dir);
  write_probe_csv(dir / "probe.csv", report);
  std::ifstream in(dir / "probe.csv");
  std::string line;
  std::size_t lines = 0;
  std::getline(in, line);
  CHECK(line == "block_name,p,accuracy,baseline_accuracy");
  while (std::getline(in, line)) ++lines;
  CHECK(lines == report.rows.size() + 1);

  const auto plot = probe_plot_json(report);
  CHECK(plot["blocks"].size() == t.net->num_blocks());
  CHECK(plot["p_levels"].size() == 3);

  data::Dataset empty;
  empty.images = Tensor({0, 1, 12, 12});
  empty.class_count = 4;
  CHECK_THROWS_AS(probe_importance(*t.net, empty, opt), DataError);
}

}  // TEST_SUITE
