#pragma once

// Small trained networks and datasets shared by several suites.

#include <memory>
#include <vector>

#include "hournas/data.hpp"
#include "hournas/search.hpp"
#include "hournas/search_space.hpp"

namespace hournas::testing {

struct Trained {
  space::SuperNetSpec space;
  std::vector<std::size_t> choices;
  data::Dataset ds;
  data::Split split;
  std::shared_ptr<model::Network> net;
  double accuracy = 0;
};

inline data::Dataset blobs(std::size_t per_class, double noise, std::uint64_t seed, std::size_t classes = 4) {
  data::SynthOptions o;
  o.classes = classes;
  o.per_class = per_class;
  o.noise = noise;
  o.seed = seed;
  return data::synth_dataset(o);
}

/// The default space with every layer on mbconv k3 e1, trained on blobs.
inline Trained trained_residual_net(std::size_t per_class = 100, double noise = 0.5, std::size_t epochs = 3,
                                    std::uint64_t seed = 0) {
  Trained t;
  t.ds = blobs(per_class, noise, seed);
  t.split = data::split_80_20(t.ds, seed);
  t.space = space::default_space(1, {t.ds.height(), t.ds.width()}, t.ds.class_count);
  t.choices.assign(t.space.num_layers(), 0);
  search::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  auto r = search::retrain(t.space, t.choices, t.ds, t.split, cfg);
  t.net = r.network;
  t.accuracy = r.accuracy;
  return t;
}

/// Stage layout of an inverted-residual mobile net: every stage opens with a
/// channel- or stride-changing block followed by two residual blocks, all
/// mbconv k3 e3.
inline space::SuperNetSpec staged_space(std::size_t classes = 4) {
  const std::vector<space::LayerPlan> plans = {
      {8, 12, 1, {}},   {12, 16, 2, {}}, {16, 16, 1, {}}, {16, 16, 1, {}}, {16, 24, 2, {}},
      {24, 24, 1, {}},  {24, 24, 1, {}}, {24, 32, 1, {}}, {32, 32, 1, {}}, {32, 32, 1, {}},
  };
  return space::make_supernet({1, 8, 3, 1, {12, 12}}, plans, {space::OpSpec::mbconv(3, 3)}, classes);
}

inline Trained trained_staged_net(std::size_t per_class = 250, double noise = 0.5, std::size_t epochs = 5,
                                  std::uint64_t seed = 0) {
  Trained t;
  t.ds = blobs(per_class, noise, seed);
  t.split = data::split_80_20(t.ds, seed);
  t.space = staged_space(t.ds.class_count);
  t.choices.assign(t.space.num_layers(), 0);
  search::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  auto r = search::retrain(t.space, t.choices, t.ds, t.split, cfg);
  t.net = r.network;
  t.accuracy = r.accuracy;
  return t;
}

}  // namespace hournas::testing
