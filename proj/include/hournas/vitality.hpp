#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hournas/data.hpp"
#include "hournas/network.hpp"
#include "hournas/rng.hpp"
#include "hournas/search_space.hpp"

namespace hournas::vitality {

/// Information-flow graph of a serial residual network. Junction nodes sit
/// between blocks; a residual layer contributes both a transform path
/// (junction -> block -> junction) and a direct shortcut edge.
struct BlockGraph {
  enum class Kind { junction, stem, layer, head };
  struct Node {
    Kind kind = Kind::junction;
    std::size_t layer = 0;  // for Kind::layer
  };

  std::vector<Node> nodes;
  std::vector<std::vector<std::size_t>> successors;
  std::size_t source = 0;
  std::size_t sink = 0;
  std::size_t residual_blocks = 0;
  std::size_t num_layers = 0;

  /// Throws Error unless the graph is acyclic with exactly one source and
  /// one sink, and these are `source` / `sink`.
  void validate() const;
};

/// Graph of stem -> layers -> head where shape-preserving layers carry a
/// shortcut.
BlockGraph block_graph(const space::SuperNetSpec& net);
/// Same construction from per-layer residual flags alone.
BlockGraph block_graph(const std::vector<bool>& residual);

/// A source-to-sink path as the sequence of visited node ids.
using Path = std::vector<std::size_t>;

inline constexpr std::size_t kMaxEnumeratedResiduals = 20;

/// All source-to-sink paths (depth-first, transform edge before shortcut).
/// Refuses graphs with more than 20 residual blocks.
std::vector<Path> enumerate_paths(const BlockGraph& g);

/// Vital blocks, numbered like model::BlockMask: 0 = stem, 1..L = layers,
/// L+1 = head. Stem and head are always members.
struct VitalSet {
  std::size_t num_layers = 0;
  std::set<std::size_t> blocks;

  bool is_vital_layer(std::size_t layer) const { return blocks.count(layer + 1) > 0; }
  bool is_vital_block(std::size_t block) const { return blocks.count(block) > 0; }
  std::vector<std::size_t> vital_layers() const;
  std::vector<std::size_t> nonvital_layers() const;
  bool operator==(const VitalSet&) const = default;
};

/// Blocks shared by every path.
VitalSet vital_by_intersection(const BlockGraph& g);

/// Stem, head, and every layer that changes the resolution or the channel
/// count (stride != 1 or out != in); all other layers carry a shortcut.
VitalSet vital_by_rule(const space::SuperNetSpec& net);

/// Per-channel keep/zero draw: each entry is 0 with probability p, else 1.
/// Throws ConfigError when p is outside [0, 1].
std::vector<Real> draw_channel_mask(std::size_t channels, double p, Rng& rng);

/// Zeroes each channel of y[N,C,...] with probability p; one draw per
/// channel, shared by every sample of the batch.
Tensor mask_channels(const Tensor& y, double p, Rng& rng);

/// Fraction of correctly classified samples, evaluated in batches with the
/// network in eval mode.
double accuracy(model::Network& net, const data::Dataset& ds, const model::BlockMask* mask = nullptr,
                std::size_t batch_size = 256);

struct ProbeOptions {
  std::vector<double> p_levels{0.3, 0.6, 1.0};
  std::size_t mask_seeds = 5;
  std::uint64_t seed = 0;
  std::size_t batch_size = 256;
};

struct ProbeRow {
  std::string block_name;
  std::size_t block = 0;
  bool vital = false;
  double p = 0;
  double accuracy = 0;  // mean over mask seeds
  double baseline_accuracy = 0;
};

struct ProbeReport {
  double baseline_accuracy = 0;
  std::vector<ProbeRow> rows;  // block-major, p-minor

  /// Mean of (baseline - accuracy) over the rows with the given p and vitality.
  double mean_drop(double p, bool vital) const;
};

/// Masks one block at a time at every p level. The model is only read.
/// Mask draws for (block, p level, seed s) come from an Rng seeded with a
/// hash of (seed, block, level, s), so reports do not depend on ordering.
ProbeReport probe_importance(model::Network& net, const data::Dataset& ds, const ProbeOptions& opt = {});

/// CSV columns block_name,p,accuracy,baseline_accuracy; the first row is the
/// unmasked baseline (block_name "baseline", p 0).
void write_probe_csv(const std::filesystem::path& path, const ProbeReport& report);

/// Bar-chart data: {"baseline": a, "p_levels": [...], "blocks": [{"name",
/// "vital", "accuracy": [... per p]}]}.
nlohmann::json probe_plot_json(const ProbeReport& report);

}  // namespace hournas::vitality
