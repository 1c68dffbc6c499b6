#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hournas/ops.hpp"
#include "hournas/rng.hpp"
#include "hournas/search_space.hpp"
#include "hournas/tensor.hpp"

namespace hournas::model {

/// Bias-free convolution followed by batchnorm and an optional ReLU.
struct ConvBn {
  Tensor weight;
  Tensor gamma;
  Tensor beta;
  ops::ChannelStats stats;  // evaluation statistics from calibrate()
  ops::Conv2dOptions conv;
  bool relu = true;
};

struct Candidate {
  space::OpSpec op;
  std::vector<ConvBn> convs;  // expand, depthwise, project; empty for skip
  bool shortcut = false;
  bool zeroed = false;  // test rig: the op outputs zeros
};

enum class Mode {
  train,      // batch statistics, gradients recorded
  eval,       // calibrated statistics when present
  calibrate,  // batch statistics captured into each ConvBn
};

/// Which candidates of one layer run, each scaled by a one-element
/// coefficient tensor: y = sum_b coeff_b * op_b(x). A tracked coefficient
/// receives dLoss/dA[l, op] during backward.
struct LayerRoute {
  std::vector<std::pair<std::size_t, Tensor>> branches;
};

/// Channel mask applied to one block during a forward pass. Blocks are
/// numbered 0 = stem, 1..L = layers, L+1 = head (masks the logits). For a
/// layer with a shortcut, the mask hits the transform branch before the add.
struct BlockMask {
  std::size_t block = 0;
  std::vector<Real> mask;
};

struct ForwardOptions {
  Mode mode = Mode::train;
  const BlockMask* mask = nullptr;
};

/// Weight-sharing supernet: every candidate of every layer owns parameters.
/// An instantiated discrete network is the same type with one candidate per
/// layer.
class Network {
 public:
  Network(space::SuperNetSpec spec, Rng& rng);

  const space::SuperNetSpec& spec() const { return spec_; }

  Tensor forward(Graph& g, const Tensor& images, const std::vector<LayerRoute>& routes,
                 const ForwardOptions& opt = {});
  /// Forward with one fixed candidate per layer.
  Tensor forward(Graph& g, const Tensor& images, const std::vector<std::size_t>& choices,
                 const ForwardOptions& opt = {});
  /// Forward of a discrete network (every layer has a single candidate).
  Tensor forward(Graph& g, const Tensor& images, const ForwardOptions& opt = {});

  /// Constant (untracked) unit routes for the given choices.
  static std::vector<LayerRoute> fixed_routes(const std::vector<std::size_t>& choices);

  std::vector<Tensor> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<std::pair<std::string, ops::ChannelStats*>> named_stats();
  /// Number of scalar weights across all candidates.
  std::size_t parameter_count();

  /// Candidate branches executed since the last reset.
  std::size_t branch_executions() const { return branch_executions_; }
  void reset_branch_executions() { branch_executions_ = 0; }

  std::size_t num_blocks() const { return spec_.layers.size() + 2; }
  std::string block_name(std::size_t block) const;

  const Candidate& candidate(std::size_t layer, std::size_t op) const { return layers_.at(layer).at(op); }
  /// Test rig: make a candidate output zeros (shortcut included).
  void set_zeroed(std::size_t layer, std::size_t op, bool on) { layers_.at(layer).at(op).zeroed = on; }

 private:
  Tensor run_conv_bn(Graph& g, const Tensor& x, ConvBn& cb, Mode mode);
  Tensor run_candidate(Graph& g, const Tensor& x, Candidate& c, Mode mode, const BlockMask* mask);

  space::SuperNetSpec spec_;
  ConvBn stem_;
  std::vector<std::vector<Candidate>> layers_;
  Tensor head_weight_;
  Tensor head_bias_;
  std::size_t branch_executions_ = 0;
};

/// Stage/block labels: "stem", "head", and "block<stage>_<j>" where every
/// shape-changing layer opens a new stage as its first block.
std::vector<std::string> block_names(const space::SuperNetSpec& spec);

/// Spec of the discrete network selected by a one-hot architecture: each
/// layer keeps only its chosen candidate.
space::SuperNetSpec discrete_spec(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices);

/// Builds the executable discrete network for a one-hot architecture.
/// Throws ConfigError if A is not one-hot or selects an inadmissible op.
Network instantiate(const space::SuperNetSpec& net, const space::ArchMatrix& arch, Rng& rng);

/// Copies tensors whose names and shapes match; returns how many were copied.
std::size_t copy_parameters(const std::map<std::string, Tensor>& from, Network& to);

/// Runs the network over `images` in calibrate mode so every batchnorm
/// stores the statistics of that batch for later evaluation.
void calibrate(Network& net, const Tensor& images);

}  // namespace hournas::model
