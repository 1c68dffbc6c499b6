#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hournas/rng.hpp"
#include "hournas/search_space.hpp"

namespace hournas::proposal {

enum class SamplerVariant { softmax, gumbel_softmax, gumbel_max };

std::string sampler_name(SamplerVariant v);
SamplerVariant parse_sampler(const std::string& name);

struct SamplerKind {
  SamplerVariant variant = SamplerVariant::gumbel_softmax;
  double tau = 1.0;
};

/// One draw A = G(theta) together with what its backward pass needs.
///
/// `relaxed` is softmax((theta + g) / tau) (g = 0 for plain softmax). For
/// gumbel_max, `arch` is the one-hot argmax of theta + g while gradients are
/// taken through `relaxed` (straight-through).
struct ArchSample {
  space::ArchMatrix arch;
  Eigen::MatrixXd relaxed;
  double tau = 1.0;
};

/// Rows of theta are logits; -inf marks a disallowed op (never sampled).
/// Throws ConfigError on NaN/+inf entries or rows without a finite logit.
ArchSample sample_arch(const Eigen::MatrixXd& theta, const SamplerKind& sampler, Rng& rng);

/// dL/dtheta given dL/dA for a draw: per row (1/tau) y .* (g - <g, y>),
/// with y the relaxed probabilities.
Eigen::MatrixXd sample_backward(const ArchSample& sample, const Eigen::MatrixXd& grad_arch);

/// Row-wise softmax(theta / tau), -inf entries map to 0.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& theta, double tau = 1.0);

/// (1/n) sum_i |R_i(A) - T_i| / M_i. When `grad` is set it receives dT/dA.
double resource_deviation(const Eigen::MatrixXd& arch, const space::ResourceTable& table,
                          Eigen::MatrixXd* grad = nullptr);

/// Mean over proposals of resource_deviation(G(theta_j)), one draw per
/// proposal. `grads`, when set, receives d/dtheta_j for every proposal.
double proposal_objective(const std::vector<Eigen::MatrixXd>& thetas, const space::ResourceTable& table,
                          const SamplerKind& sampler, Rng& rng, std::vector<Eigen::MatrixXd>* grads = nullptr);

/// Rows u_j = p_j / |p_j| with p_j the flattened softmax(theta_j / tau);
/// returns sum |<u_i, u_j>| over i != j (the diagonal of U U^T is 1).
double orthogonality_penalty(const std::vector<Eigen::MatrixXd>& thetas, double tau = 1.0,
                             std::vector<Eigen::MatrixXd>* grads = nullptr);

/// Mean of |<u_i, u_j>| over pairs i < j (0 for m = 1).
double mean_pairwise_overlap(const std::vector<Eigen::MatrixXd>& thetas, double tau = 1.0);

/// Learned proposals plus the mixture logits over them.
struct ProposalSet {
  std::vector<Eigen::MatrixXd> thetas;  // m matrices, rows x O
  Eigen::VectorXd pi_logits;            // m
  double alpha = 5.0;
  double beta = 1e-2;
  double tau = 1.0;  // fitting temperature
  std::vector<double> objective_trace;
  std::vector<double> penalty_trace;

  std::size_t m() const { return thetas.size(); }
  /// Throws ConfigError unless m >= 1, shapes agree, and all logits are
  /// finite apart from -inf pins on disallowed entries.
  void validate() const;
};

struct FitOptions {
  std::size_t m = 8;
  std::size_t iterations = 1000;
  double beta = 1e-2;
  double alpha = 5.0;  // carried into the set for the search stage
  double tau = 0.5;
  double lr = 0.01;
  double init_std = 1e-3;
  /// Gumbel draws averaged per proposal and step.
  std::size_t draws = 64;
  SamplerVariant sampler = SamplerVariant::gumbel_softmax;
};

/// Initial logits: N(0, init_std) on allowed entries, -inf elsewhere.
Eigen::MatrixXd init_theta(const space::ResourceTable& table, double init_std, Rng& rng);

/// Minimizes proposal_objective + beta * orthogonality_penalty with Adam.
/// Pi is initialized uniform (zeros).
ProposalSet optimize_proposals(const space::ResourceTable& table, const FitOptions& opt, Rng& rng);

/// Simplex weights pi = G(Pi) as a 1 x m draw.
ArchSample sample_mixture(const Eigen::VectorXd& pi_logits, const SamplerKind& sampler, Rng& rng);

/// A_Theta = sum_j pi_j A_j.
space::ArchMatrix ensemble_arch(const Eigen::VectorXd& pi, const std::vector<ArchSample>& samples);

/// Backward of ensemble_arch: d/dpi_j = <gA, A_j>, d/dA_j = pi_j gA.
void ensemble_backward(const Eigen::VectorXd& pi, const std::vector<ArchSample>& samples, const Eigen::MatrixXd& grad,
                       Eigen::VectorXd& grad_pi, std::vector<Eigen::MatrixXd>& grad_samples);

/// Serialized as {m, alpha, beta, tau, thetas, pi, targets, objective_trace,
/// penalty_trace}; -inf logits become null.
nlohmann::json to_json(const ProposalSet& set, const space::ResourceTable& table);
ProposalSet proposals_from_json(const nlohmann::json& j);

/// Costs of `count` architectures drawn from the set at temperature tau:
/// proposal j ~ softmax(Pi), then A ~ gumbel_softmax(theta_j, tau).
/// Returns count x n resource values.
Eigen::MatrixXd sample_costs(const ProposalSet& set, const space::ResourceTable& table, double tau,
                             std::size_t count, Rng& rng);

/// Fraction of rows in `costs` within +-rel of every target.
double fraction_within(const Eigen::MatrixXd& costs, const space::ResourceTable& table, double rel);

}  // namespace hournas::proposal
