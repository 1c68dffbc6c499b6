#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hournas/common.hpp"

namespace hournas::space {

enum class OpKind { mbconv, skip, disallowed };

/// One candidate operation of a searchable layer.
///
/// mbconv: 1x1 expand (x expansion, `groups` groups) -> BN -> ReLU ->
///         k x k depthwise -> BN -> ReLU -> 1x1 project (`groups`) -> BN,
///         plus the input when the layer preserves shape.
/// skip:   identity; only admissible in shape-preserving layers.
/// disallowed: padding entry for an inadmissible catalog op. Never sampled.
struct OpSpec {
  OpKind kind = OpKind::disallowed;
  std::size_t kernel = 0;
  std::size_t expansion = 0;
  std::size_t groups = 1;

  static OpSpec mbconv(std::size_t kernel, std::size_t expansion, std::size_t groups = 1) {
    return {OpKind::mbconv, kernel, expansion, groups};
  }
  static OpSpec skip() { return {OpKind::skip, 0, 0, 1}; }
  static OpSpec disallowed() { return {}; }

  bool allowed() const { return kind != OpKind::disallowed; }
  /// "mbconv_k3_e6", "mbconv_k3_e6_g2", "skip", "disallowed"
  std::string name() const;
  bool operator==(const OpSpec&) const = default;
};

struct Resolution {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const Resolution&) const = default;
};

/// Spatial size after a stride-s convolution with "same" padding: ceil(H/s).
Resolution downsample(Resolution r, std::size_t stride);

struct LayerSpec {
  std::size_t index = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  Resolution input_resolution;
  std::vector<OpSpec> candidates;

  Resolution output_resolution() const { return downsample(input_resolution, stride); }
  /// Stride 1 with equal channels: the layer carries a shortcut.
  bool shape_preserving() const { return stride == 1 && in_channels == out_channels; }
};

struct StemSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Resolution input_resolution;

  Resolution output_resolution() const { return downsample(input_resolution, stride); }
};

/// Global average pool followed by a linear classifier.
struct HeadSpec {
  std::size_t in_channels = 0;
  std::size_t num_classes = 0;
};

struct SuperNetSpec {
  StemSpec stem;
  std::vector<LayerSpec> layers;
  HeadSpec head;
  std::size_t num_classes = 0;

  std::size_t num_layers() const { return layers.size(); }
  /// Candidate count O, shared by all layers.
  std::size_t num_ops() const { return layers.empty() ? 0 : layers.front().candidates.size(); }
  /// Throws ConfigError on broken channel/resolution chains, ragged candidate
  /// lists or admissible-looking ops that cannot run in their layer.
  void validate() const;
};

/// Whether `op` can run in `layer` (skip needs a shape-preserving layer; the
/// grouped 1x1 convolutions need divisible channel counts).
bool admissible(const OpSpec& op, const LayerSpec& layer);

/// Serial layer description used to assemble a supernet.
struct LayerPlan {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t stride;
  std::optional<std::vector<OpSpec>> candidates;
};

/// Fills indices and resolutions, applies `catalog` where a plan has no
/// candidates, and replaces inadmissible entries with disallowed markers.
SuperNetSpec make_supernet(const StemSpec& stem, const std::vector<LayerPlan>& plans,
                           const std::vector<OpSpec>& catalog, std::size_t num_classes);

/// mbconv{k3,e1}, mbconv{k3,e3}, mbconv{k5,e3}, mbconv{k3,e6}, skip
std::vector<OpSpec> default_catalog();

/// Nine-layer miniature of an FBNet-style space: stem 3x3 -> 8 channels,
/// stages 8 | 16 (s2) 16 16 | 24 (s2) 24 24 | 32 32, pool + linear head.
SuperNetSpec default_space(std::size_t in_channels, Resolution input, std::size_t num_classes);

// ---------------------------------------------------------------------------
// Resource accounting

enum class Objective { flops, params };

std::string objective_name(Objective o);
Objective parse_objective(const std::string& name);

/// Multiply-accumulates of a bias-free convolution.
double conv_macs(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t groups,
                 Resolution out);

/// Cost of one candidate op in its layer. FLOPs are counted as MACs of the
/// convolutions (batchnorm, activations and additions are free); params are
/// convolution weights plus the batchnorm affine pairs. skip costs 0.
double op_cost(const OpSpec& op, const LayerSpec& layer, Objective objective);

/// Stem plus head cost, present in every architecture.
double fixed_cost(const SuperNetSpec& net, Objective objective);

/// Target in absolute units, or as a percentage of the normalizer M.
struct TargetSpec {
  double value = 0;
  bool percent_of_max = false;
};

/// Parses "300000", "45%M" or "45%".
TargetSpec parse_target(const std::string& text);

/// Per-objective cost matrices over the searchable rows of a supernet.
///
/// Row r of each matrix corresponds to net layer `layer_ids[r]`. Layers with
/// a pinned choice are folded into `fixed`, so `resource = sum(A .* F) + fixed`
/// is an end-to-end figure.
struct ResourceTable {
  std::vector<Objective> objectives;
  std::vector<Eigen::MatrixXd> costs;  // n matrices, rows x O
  std::vector<double> fixed;           // n
  std::vector<double> normalizer;      // M_i: max achievable cost, n
  std::vector<double> minimum;         // min achievable cost, n
  std::vector<double> targets;         // T_i, absolute, n
  std::vector<std::size_t> layer_ids;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> allowed;  // rows x O

  std::size_t num_objectives() const { return objectives.size(); }
  std::size_t rows() const { return layer_ids.size(); }
  std::size_t cols() const { return allowed.cols(); }
  std::vector<std::string> objective_names() const;
};

/// Builds F, M and absolute targets. `pinned[l]`, when set, fixes layer l's
/// choice and moves its cost into `fixed`. Throws ConfigError("unreachable
/// target ...") when a target lies outside [minimum, M].
ResourceTable build_resource_table(const SuperNetSpec& net, const std::map<Objective, TargetSpec>& targets,
                                   const std::vector<std::optional<std::size_t>>& pinned = {});

/// Row-stochastic L x O architecture selection.
class ArchMatrix {
 public:
  ArchMatrix() = default;
  /// Throws ShapeError unless every row sums to 1 within `tol` and all
  /// entries are non-negative.
  explicit ArchMatrix(Eigen::MatrixXd weights, double tol = 1e-9);

  static ArchMatrix one_hot(const std::vector<std::size_t>& choices, std::size_t num_ops);
  static ArchMatrix uniform(const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed);

  const Eigen::MatrixXd& weights() const { return w_; }
  std::size_t rows() const { return w_.rows(); }
  std::size_t cols() const { return w_.cols(); }
  double operator()(std::size_t l, std::size_t o) const { return w_(l, o); }

  bool is_one_hot() const;
  /// Per-row argmax, lowest index on ties.
  std::vector<std::size_t> choices() const;

 private:
  Eigen::MatrixXd w_;
};

/// sum(A .* F_i) + fixed_i
double resource_of(const ArchMatrix& arch, const ResourceTable& table, std::size_t objective);

/// Expands per-row choices over `table.layer_ids` into a full-network choice
/// vector, keeping `pinned` entries for the other layers.
std::vector<std::size_t> merge_choices(const ResourceTable& table, const std::vector<std::size_t>& row_choices,
                                       const std::vector<std::optional<std::size_t>>& pinned,
                                       std::size_t num_layers);

/// Indices of the non-disallowed candidates of a layer.
std::vector<std::size_t> allowed_ops(const LayerSpec& layer);

}  // namespace hournas::space
