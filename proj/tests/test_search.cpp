#include <doctest.h>

#include <cmath>

#include "hournas/search.hpp"
#include "hournas/vitality.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hournas;
using namespace hournas::search;
using space::Objective;
using space::OpSpec;

namespace {

space::SuperNetSpec strided(const std::vector<std::size_t>& strides, std::size_t ch = 8) {
  std::vector<space::LayerPlan> plans;
  for (auto s : strides) plans.push_back({ch, ch, s, std::nullopt});
  return space::make_supernet({1, ch, 3, 1, {12, 12}}, plans, {OpSpec::mbconv(3, 1), OpSpec::skip()}, 4);
}

// Two channel-changing (hence vital) layers, two mbconv candidates each.
space::SuperNetSpec two_vital_layers() {
  return space::make_supernet({1, 8, 3, 1, {12, 12}}, {{8, 12, 1, {}}, {12, 16, 2, {}}},
                              {OpSpec::mbconv(3, 1), OpSpec::mbconv(3, 3)}, 4);
}

// Three shape-preserving layers (no vital layer besides stem and head).
space::SuperNetSpec flat_space() {
  return space::make_supernet({1, 8, 3, 1, {12, 12}}, {{8, 8, 1, {}}, {8, 8, 1, {}}, {8, 8, 1, {}}},
                              {OpSpec::mbconv(3, 1), OpSpec::mbconv(5, 3), OpSpec::skip()}, 4);
}

// One searchable layer between stem and head, two mbconv candidates.
space::SuperNetSpec head_adjacent(std::size_t cin, std::size_t cout, std::size_t stride) {
  return space::make_supernet({1, cin, 3, 1, {12, 12}}, {{cin, cout, stride, {}}},
                              {OpSpec::mbconv(3, 1), OpSpec::mbconv(3, 3)}, 4);
}

data::Dataset separable(std::uint64_t seed) {
  data::SynthOptions o;
  o.per_class = 500;
  o.noise = 0.1;
  o.seed = seed;
  return data::synth_dataset(o);
}

SearchConfig quick_config(std::uint64_t seed = 0) {
  SearchConfig cfg;
  cfg.seed = seed;
  cfg.m = 2;
  cfg.proposal_iterations = 200;
  cfg.proposal_draws = 8;
  return cfg;
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("temperature schedule") {
  CHECK(anneal_tau(5.0, 0.9999, 0) == 5.0);
  CHECK(anneal_tau(5.0, 0.9999, 1) == doctest::Approx(4.9995).epsilon(1e-15));
  const double closed = 5.0 * std::exp(10000.0 * std::log(0.9999));
  CHECK(anneal_tau(5.0, 0.9999, 10000) == doctest::Approx(closed).epsilon(1e-12));
  CHECK(std::abs(anneal_tau(5.0, 0.9999, 10000) - 1.839) < 1e-3);
}

TEST_CASE("config validation") {
  SearchConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau_decay = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.m = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("batches") {
  const auto ds = hournas::testing::blobs(10, 0.5, 1);
  std::vector<std::size_t> idx(33);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(1);
  const auto b = make_batches(ds, idx, 16, DataSource::val, rng);
  REQUIRE(b.size() == 2);
  CHECK(b[0].labels.size() == 16);
  CHECK(b[1].labels.size() == 17);
  std::set<int> seen;
  for (const auto& x : b) CHECK(x.source == DataSource::val);
  CHECK(b[0].images.shape() == Shape{16, 1, 12, 12});
}

TEST_CASE("vital supernet") {
  const auto net = strided({2, 1, 1, 2, 1});
  const auto v = build_vital_supernet(net, vitality::vital_by_rule(net));
  CHECK(v.num_layers() == 2);
  CHECK(v.layers[0].stride == 2);
  CHECK(v.layers[1].stride == 2);

  const auto all = two_vital_layers();
  const auto same = build_vital_supernet(all, vitality::vital_by_rule(all));
  REQUIRE(same.num_layers() == all.num_layers());
  for (std::size_t l = 0; l < all.num_layers(); ++l) {
    CHECK(same.layers[l].candidates == all.layers[l].candidates);
    CHECK(same.layers[l].stride == all.layers[l].stride);
    CHECK(same.layers[l].input_resolution == all.layers[l].input_resolution);
  }

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = hournas::testing::random_serial_space(rng);
    const auto vs = vitality::vital_by_rule(s);
    for (auto l : vs.nonvital_layers()) {
      CHECK(s.layers[l].stride == 1);
      CHECK(s.layers[l].in_channels == s.layers[l].out_channels);
    }
    CHECK(build_vital_supernet(s, vs).num_layers() == vs.vital_layers().size());
  }
}

TEST_CASE("vital stage with a single candidate") {
  const auto net = space::make_supernet({1, 8, 3, 1, {12, 12}}, {{8, 12, 1, {}}, {12, 16, 2, {}}},
                                        {OpSpec::mbconv(3, 1)}, 4);
  const auto ds = hournas::testing::blobs(20, 0.5, 3);
  const auto split = data::split_80_20(ds, 3);
  Rng rng(3);
  model::Network vnet(net, rng);
  SearchState state;
  const auto choices = search_vital(vnet, ds, split, quick_config(), state, rng);
  CHECK(choices == std::vector<std::size_t>{0, 0});
}

// The zeroed candidate sits in the last searchable layer, right before the
// head: a layer followed by batchnorm sees a mixture of one live op and a
// zero op only up to scale, which the normalization removes.
TEST_CASE("zeroed candidate never wins the vital stage") {
  const auto net = head_adjacent(8, 16, 2);
  const auto ds = separable(4);
  const auto split = data::split_80_20(ds, 4);
  for (std::size_t zeroed : {0, 1})
    for (std::uint64_t seed : {1, 2, 3, 4}) {
      Rng rng(seed);
      model::Network vnet(net, rng);
      vnet.set_zeroed(0, zeroed, true);
      SearchState state;
      const auto choices = search_vital(vnet, ds, split, quick_config(seed), state, rng);
      INFO("zeroed op " << zeroed << " seed " << seed);
      CHECK(choices[0] != zeroed);
      CHECK(state.theta_vital.allFinite());
      const Eigen::MatrixXd p = proposal::softmax_rows(state.theta_vital);
      for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1) < 1e-12);
      for (double l : state.train_loss_trace) CHECK(std::isfinite(l));
      CHECK(state.weight_steps == state.arch_steps);
    }
}

TEST_CASE("zeroed candidate loses the proposal stage at alpha 0") {
  const auto net = head_adjacent(8, 8, 1);
  const auto ds = separable(5);
  const auto split = data::split_80_20(ds, 5);
  for (std::size_t zeroed : {0, 1})
    for (std::uint64_t seed : {1, 2, 3, 4}) {
      Rng rng(seed);
      model::Network full(net, rng);
      full.set_zeroed(0, zeroed, true);
      SearchState state;
      state.table = space::build_resource_table(net, {{Objective::params, {50, true}}});
      state.searched_layers = {0};
      state.proposals.thetas = {Eigen::MatrixXd::Zero(1, 2)};
      state.proposals.pi_logits = Eigen::VectorXd::Zero(1);
      auto cfg = quick_config(seed);
      cfg.alpha = 0;
      cfg.m = 1;
      search_nonvital(full, ds, split, cfg, state, rng);
      INFO("zeroed op " << zeroed << " seed " << seed);
      CHECK(derive_final(state, net).choices()[0] != zeroed);
      for (double l : state.val_loss_trace) CHECK(std::isfinite(l));
    }
}

TEST_CASE("resource term dominates at alpha 1e6") {
  const auto net = flat_space();
  const auto ds = hournas::testing::blobs(60, 0.5, 8);
  const auto split = data::split_80_20(ds, 8);
  const std::vector<std::size_t> goal{1, 2, 0};
  const double target = architecture_cost(net, goal, Objective::params);
  for (std::uint64_t seed : {9, 10, 11}) {
    auto cfg = quick_config(seed);
    cfg.proposal_iterations = 1000;
    cfg.alpha = 1e6;
    cfg.vital_priori = false;
    const auto res = run_search(net, ds, split, {{Objective::params, {target, false}}}, cfg);
    INFO("seed " << seed << " target " << target << " got " << res.resources[0]);
    CHECK(std::abs(res.resources[0] - target) <= 0.01 * target);
  }
}

TEST_CASE("derive_final") {
  const auto net = flat_space();
  SearchState state;
  state.phase = Phase::done;
  state.searched_layers = {0, 1, 2};
  Eigen::MatrixXd t0(3, 3), t1(3, 3);
  t0 << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  t1 << 0, 0, 1, 0, 2, 2, 5, 0, 0;
  state.proposals.thetas = {t0};
  state.proposals.pi_logits = Eigen::VectorXd::Zero(1);
  CHECK(derive_final(state, net).choices() == std::vector<std::size_t>{0, 1, 2});

  state.proposals.thetas = {t0, t1};
  state.proposals.pi_logits = Eigen::Vector2d(std::log(0.1), std::log(0.9));
  CHECK(derive_final(state, net).choices() == std::vector<std::size_t>{2, 1, 0});

  state.phase = Phase::nonvital;
  CHECK_THROWS_AS(derive_final(state, net), Error);
}

TEST_CASE("batch tags and branch counts") {
  const auto net = flat_space();
  const auto ds = hournas::testing::blobs(10, 0.5, 10);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  Rng rng(11);
  model::Network m(net, rng);
  const auto val = make_batches(ds, idx, 4, DataSource::val, rng);
  const auto routes = model::Network::fixed_routes({0, 1, 2});
  CHECK_THROWS_AS(weight_step(m, val[0], routes, 0.1), Error);

  const auto train = make_batches(ds, idx, 4, DataSource::train, rng);
  m.reset_branch_executions();
  weight_step(m, train[0], routes, 0.1);
  CHECK(m.branch_executions() == net.num_layers());

  // A relaxed architecture routes every allowed candidate.
  std::vector<model::LayerRoute> all(3);
  for (auto& r : all)
    for (std::size_t o = 0; o < 3; ++o) r.branches.push_back({o, Tensor::scalar(Real(1.0 / 3))});
  m.reset_branch_executions();
  Graph g = Graph::inference();
  m.forward(g, train[0].images, all);
  CHECK(m.branch_executions() == 9);
}

TEST_CASE("full search is deterministic and keeps vital choices") {
  const auto ds = hournas::testing::blobs(40, 0.5, 12);
  const auto split = data::split_80_20(ds, 12);
  const auto net = space::default_space(1, {12, 12}, 4);
  const std::map<Objective, space::TargetSpec> targets{{Objective::flops, {40, true}}, {Objective::params, {40, true}}};
  const auto cfg = quick_config(13);
  const auto a = run_search(net, ds, split, targets, cfg);
  const auto b = run_search(net, ds, split, targets, cfg);
  CHECK(a.choices == b.choices);
  CHECK(a.state.train_loss_trace == b.state.train_loss_trace);
  CHECK(a.state.val_loss_trace == b.state.val_loss_trace);

  CHECK(a.state.vital_layers == vitality::vital_by_rule(net).vital_layers());
  for (std::size_t k = 0; k < a.state.vital_layers.size(); ++k)
    CHECK(a.choices[a.state.vital_layers[k]] == a.state.vital_choices[k]);
  for (double v : a.state.val_loss_trace) CHECK(std::isfinite(v));
  CHECK(a.state.phase == Phase::done);
  CHECK(a.state.tau < cfg.tau0);

  const auto c = run_search(net, ds, split, targets, quick_config(14));
  CHECK(c.state.train_loss_trace != a.state.train_loss_trace);
}

TEST_CASE("proposal shape mismatch is rejected") {
  const auto net = flat_space();
  const auto ds = hournas::testing::blobs(10, 0.5, 15);
  const auto split = data::split_80_20(ds, 15);
  Rng rng(16);
  model::Network full(net, rng);
  SearchState state;
  state.table = space::build_resource_table(net, {{Objective::params, {50, true}}});
  state.proposals.thetas = {Eigen::MatrixXd::Zero(2, 3)};
  state.proposals.pi_logits = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(search_nonvital(full, ds, split, quick_config(), state, rng), ConfigError);
}

TEST_CASE("retrain learns separable blobs") {
  auto t = hournas::testing::trained_residual_net(100, 0.3, 3, 17);
  CHECK(t.accuracy > 0.9);
}

}  // TEST_SUITE
