#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hournas/data.hpp"
#include "hournas/network.hpp"
#include "hournas/proposal.hpp"
#include "hournas/search_space.hpp"
#include "hournas/vitality.hpp"

namespace hournas::search {

struct SearchConfig {
  std::size_t epochs_vital = 1;
  std::size_t epochs_nonvital = 1;
  std::size_t proposal_iterations = 1000;
  std::size_t m = 8;
  double alpha = 5.0;
  double beta = 1e-2;
  double lr_weights = 0.1;
  double lr_arch = 0.01;
  double tau0 = 5.0;
  double tau_decay = 0.9999;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  /// Architecture sampler of the proposal stage (and of the single-stage
  /// search); gumbel_softmax runs every branch.
  proposal::SamplerVariant sampler = proposal::SamplerVariant::gumbel_max;
  /// Sampler of the vital stage. A lone sampled branch followed by batchnorm
  /// gets no choice gradient, so the small vital supernet runs every branch.
  proposal::SamplerVariant vital_sampler = proposal::SamplerVariant::gumbel_softmax;
  /// Proposal fitting temperature and Gumbel draws per fitting step.
  double proposal_tau = 0.5;
  std::size_t proposal_draws = 64;
  /// false: a single stage over all layers for epochs_vital + epochs_nonvital
  /// epochs.
  bool vital_priori = true;
  /// When set, supernet weights and architecture parameters are written here
  /// at every epoch boundary.
  std::optional<std::filesystem::path> checkpoint_dir;

  /// Throws ConfigError unless counts and rates are positive and
  /// tau_decay lies in (0, 1].
  void validate() const;
};

/// tau0 * decay^iteration
double anneal_tau(double tau0, double decay, std::uint64_t iteration);

enum class DataSource { train, val };

struct Batch {
  Tensor images;
  std::vector<int> labels;
  DataSource source = DataSource::train;
};

/// Shuffled mini-batches over `indices`. A trailing batch smaller than two
/// samples is merged into the previous one (batchnorm needs N >= 2).
std::vector<Batch> make_batches(const data::Dataset& ds, std::span<const std::size_t> indices,
                                std::size_t batch_size, DataSource source, Rng& rng);

enum class Phase { vital, proposal_fit, nonvital, done };
std::string phase_name(Phase p);

struct SearchState {
  Phase phase = Phase::vital;
  std::uint64_t iteration = 0;
  double tau = 5.0;

  vitality::VitalSet vital;
  std::vector<std::size_t> vital_layers;     // net layer ids searched in stage 1
  std::vector<std::size_t> vital_choices;    // op per vital layer, fixed after stage 1
  std::vector<std::size_t> searched_layers;  // net layer ids searched in stage 2
  Eigen::MatrixXd theta_vital;

  space::ResourceTable table;  // stage-2 table (vital choices pinned)
  proposal::ProposalSet proposals;

  std::vector<double> train_loss_trace;
  std::vector<double> val_loss_trace;
  std::vector<double> resource_trace;  // T(A_Theta) at arch steps
  std::size_t weight_steps = 0;
  std::size_t arch_steps = 0;
};

/// Stem, the vital layers in order, head. Throws Error if an omitted layer
/// changes shape (impossible for the rule-based vital set).
space::SuperNetSpec build_vital_supernet(const space::SuperNetSpec& net, const vitality::VitalSet& vital);

/// One SGD step on a train batch for fixed routes. Throws Error if the batch
/// is not tagged train. Returns the cross-entropy.
double weight_step(model::Network& net, const Batch& batch, const std::vector<model::LayerRoute>& routes,
                   double lr);

/// Stage 1 over the vital supernet (every layer searchable). Fills
/// theta_vital and vital_choices; returns the choices.
std::vector<std::size_t> search_vital(model::Network& vital_net, const data::Dataset& ds, const data::Split& split,
                                      const SearchConfig& cfg, SearchState& state, Rng& rng);

/// Stage 2 over the full supernet with vital layers fixed to
/// state.vital_choices and the rows of state.table searched through the
/// proposal mixture. Validation steps minimize H_val + alpha * T(A_Theta).
void search_nonvital(model::Network& net, const data::Dataset& ds, const data::Split& split, const SearchConfig& cfg,
                     SearchState& state, Rng& rng);

/// Full-network one-hot choice: proposal argmax Pi, then per searched row
/// argmax theta; vital layers from state.vital_choices. Ties: lowest index.
space::ArchMatrix derive_final(const SearchState& state, const space::SuperNetSpec& net);

struct SearchResult {
  SearchState state;
  space::ArchMatrix arch;
  std::vector<std::size_t> choices;
  std::vector<double> resources;  // per objective of state.table
  std::map<space::Objective, double> targets;
};

/// Targets are resolved to absolute values against the unpinned supernet.
std::map<space::Objective, double> resolve_targets(const space::SuperNetSpec& net,
                                                   const std::map<space::Objective, space::TargetSpec>& targets);

/// Whole pipeline: vital search, proposal fitting, non-vital search,
/// derivation. With cfg.vital_priori false, one stage covers every layer.
SearchResult run_search(const space::SuperNetSpec& net, const data::Dataset& ds, const data::Split& split,
                        const std::map<space::Objective, space::TargetSpec>& targets, const SearchConfig& cfg);

/// End-to-end cost of a discrete choice vector.
double architecture_cost(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices,
                         space::Objective objective);

// ---------------------------------------------------------------------------
// Plain training of discrete networks

struct TrainConfig {
  std::size_t epochs = 5;
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t calibration_samples = 512;
};

/// Trains `net` (single candidate per layer) on the listed samples with SGD,
/// then calibrates batchnorm statistics on the first calibration_samples of
/// them. Returns the per-epoch mean training loss.
std::vector<double> train_network(model::Network& net, const data::Dataset& ds,
                                  std::span<const std::size_t> train_indices, const TrainConfig& cfg);

struct RetrainResult {
  double accuracy = 0;
  std::vector<double> loss_trace;
  std::shared_ptr<model::Network> network;
};

/// Builds a fresh network for `choices` (init from Rng(cfg.seed)), trains it
/// on split.train and reports accuracy on split.val.
RetrainResult retrain(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices,
                      const data::Dataset& ds, const data::Split& split, const TrainConfig& cfg);

}  // namespace hournas::search
