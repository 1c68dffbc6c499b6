#include "hournas/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hournas/checkpoint.hpp"
#include "hournas/optim.hpp"

namespace hournas::search {

void SearchConfig::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ConfigError(std::string("search config: ") + name + " must be positive");
  };
  positive(static_cast<double>(epochs_vital), "epochs_vital");
  positive(static_cast<double>(epochs_nonvital), "epochs_nonvital");
  positive(static_cast<double>(proposal_iterations), "proposal_iterations");
  positive(static_cast<double>(m), "m");
  positive(static_cast<double>(batch_size), "batch_size");
  positive(static_cast<double>(proposal_draws), "proposal_draws");
  positive(lr_weights, "lr_weights");
  positive(lr_arch, "lr_arch");
  positive(tau0, "tau0");
  positive(proposal_tau, "proposal_tau");
  if (!(alpha >= 0)) throw ConfigError("search config: alpha must be >= 0");
  if (!(beta >= 0)) throw ConfigError("search config: beta must be >= 0");
  if (!(tau_decay > 0 && tau_decay <= 1)) throw ConfigError("search config: tau_decay must lie in (0, 1]");
  if (batch_size < 2) throw ConfigError("search config: batch_size must be >= 2 for batchnorm");
}

double anneal_tau(double tau0, double decay, std::uint64_t iteration) {
  return tau0 * std::pow(decay, static_cast<double>(iteration));
}

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::vital:
      return "vital";
    case Phase::proposal_fit:
      return "proposal_fit";
    case Phase::nonvital:
      return "nonvital";
    case Phase::done:
      return "done";
  }
  return "?";
}

std::vector<Batch> make_batches(const data::Dataset& ds, std::span<const std::size_t> indices,
                                std::size_t batch_size, DataSource source, Rng& rng) {
  if (indices.size() < 2) throw DataError("batches: split has fewer than 2 samples");
  if (batch_size < 2) throw ConfigError("batches: batch size must be >= 2");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t s = 0; s < order.size(); s += batch_size) ranges.emplace_back(s, std::min(order.size(), s + batch_size));
  if (ranges.size() > 1 && ranges.back().second - ranges.back().first < 2) {
    ranges[ranges.size() - 2].second = ranges.back().second;
    ranges.pop_back();
  }
  std::vector<Batch> out;
  for (auto [a, b] : ranges) {
    std::span<const std::size_t> idx(order.data() + a, b - a);
    out.push_back({ds.gather_images(idx), ds.gather_labels(idx), source});
  }
  return out;
}

space::SuperNetSpec build_vital_supernet(const space::SuperNetSpec& net, const vitality::VitalSet& vital) {
  space::SuperNetSpec out = net;
  out.layers.clear();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layers[l];
    if (vital.is_vital_layer(l)) {
      out.layers.push_back(layer);
      out.layers.back().index = out.layers.size() - 1;
    } else if (!layer.shape_preserving()) {
      throw Error("vital supernet: omitted layer " + std::to_string(l) + " changes shape");
    }
  }
  out.validate();
  return out;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void zero_parameter_grads(model::Network& net) {
  for (auto& p : net.parameters()) p.zero_grad();
}

double sgd_on_batch(model::Network& net, const Batch& batch, const std::vector<model::LayerRoute>* routes, double lr) {
  Graph g;
  Tensor logits = routes ? net.forward(g, batch.images, *routes) : net.forward(g, batch.images);
  Tensor loss = ops::cross_entropy(g, logits, batch.labels);
  g.backward(loss);
  auto params = net.parameters();
  optim::sgd_step(params, lr);
  return loss.item();
}

Eigen::MatrixXd theta_for_layers(const space::SuperNetSpec& net, const std::vector<std::size_t>& layers) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(layers.size()), net.num_ops());
  for (std::size_t r = 0; r < layers.size(); ++r)
    for (std::size_t o = 0; o < net.num_ops(); ++o)
      if (!net.layers[layers[r]].candidates[o].allowed()) t(r, o) = kNegInf;
  return t;
}

std::vector<std::size_t> argmax_rows(const Eigen::MatrixXd& m) {
  std::vector<std::size_t> out(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = c;
    out[r] = static_cast<std::size_t>(best);
  }
  return out;
}

/// Architecture parameters searched through the proposal mixture. Stage 1
/// is the special case of one proposal, no resource term and no fixed layers.
struct ArchSearch {
  ArchSearch(model::Network& net, std::vector<Eigen::MatrixXd>& thetas, Eigen::VectorXd& pi,
             std::vector<std::size_t> rows, std::vector<std::optional<std::size_t>> fixed,
             const space::ResourceTable* table, double alpha, proposal::SamplerVariant sampler,
             const SearchConfig& cfg, SearchState& state)
      : net(net), thetas(thetas), pi(pi), rows(std::move(rows)), fixed(std::move(fixed)), table(table),
        alpha(alpha), sampler(sampler), cfg(cfg), state(state), theta_slots(thetas.size()) {}

  model::Network& net;
  std::vector<Eigen::MatrixXd>& thetas;
  Eigen::VectorXd& pi;
  std::vector<std::size_t> rows;                  // row r -> net layer
  std::vector<std::optional<std::size_t>> fixed;  // per net layer
  const space::ResourceTable* table;
  double alpha;
  proposal::SamplerVariant sampler;
  const SearchConfig& cfg;
  SearchState& state;

  std::vector<optim::AdamSlot<double>> theta_slots;
  optim::AdamSlot<double> pi_slot;

  struct Draw {
    proposal::ArchSample pi;
    std::vector<proposal::ArchSample> samples;
    space::ArchMatrix mix;
  };

  Draw draw(Rng& rng) {
    state.tau = anneal_tau(cfg.tau0, cfg.tau_decay, state.iteration);
    const proposal::SamplerKind kind{sampler, state.tau};
    Draw d;
    d.pi = proposal::sample_mixture(pi, kind, rng);
    for (const auto& t : thetas) d.samples.push_back(proposal::sample_arch(t, kind, rng));
    const Eigen::VectorXd weights = d.pi.arch.weights().row(0).transpose();
    d.mix = proposal::ensemble_arch(weights, d.samples);
    return d;
  }

  /// Routes for the mixed architecture; coefficient tensors are tracked
  /// when `track` so their gradients give dH/dA.
  std::vector<model::LayerRoute> routes(const space::ArchMatrix& a, bool track,
                                        std::vector<std::vector<std::pair<std::size_t, Tensor>>>& coeffs) {
    std::vector<model::LayerRoute> out(net.spec().num_layers());
    coeffs.assign(rows.size(), {});
    for (std::size_t l = 0; l < out.size(); ++l)
      if (fixed[l]) out[l].branches.push_back({*fixed[l], Tensor::scalar(Real(1))});
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t o = 0; o < a.cols(); ++o) {
        const double w = a(r, o);
        if (w == 0) continue;
        Tensor c = Tensor::scalar(static_cast<Real>(w), track);
        out[rows[r]].branches.push_back({o, c});
        coeffs[r].push_back({o, c});
      }
    return out;
  }

  void check_forward(const std::vector<model::LayerRoute>& routes) {
    for (std::size_t l = 0; l < fixed.size(); ++l)
      if (fixed[l] && (routes[l].branches.size() != 1 || routes[l].branches[0].first != *fixed[l]))
        throw Error("search: a fixed layer changed its operator");
    if (sampler == proposal::SamplerVariant::gumbel_max && net.branch_executions() != net.spec().num_layers())
      throw Error("search: gumbel_max forward executed " + std::to_string(net.branch_executions()) +
                  " branches for " + std::to_string(net.spec().num_layers()) + " layers");
  }

  void weight_update(const Batch& batch, Rng& rng) {
    if (batch.source != DataSource::train) throw Error("search: weight update on a non-train batch");
    const Draw d = draw(rng);
    std::vector<std::vector<std::pair<std::size_t, Tensor>>> coeffs;
    const auto r = routes(d.mix, false, coeffs);
    net.reset_branch_executions();
    state.train_loss_trace.push_back(weight_step(net, batch, r, cfg.lr_weights));
    check_forward(r);
    ++state.weight_steps;
    ++state.iteration;
  }

  void arch_update(const Batch& batch, Rng& rng) {
    if (batch.source != DataSource::val) throw Error("search: architecture update on a non-val batch");
    const Draw d = draw(rng);
    std::vector<std::vector<std::pair<std::size_t, Tensor>>> coeffs;
    const auto r = routes(d.mix, true, coeffs);
    net.reset_branch_executions();
    Graph g;
    Tensor logits = net.forward(g, batch.images, r);
    Tensor loss = ops::cross_entropy(g, logits, batch.labels);
    g.backward(loss);
    check_forward(r);
    zero_parameter_grads(net);

    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(d.mix.rows(), d.mix.cols());
    for (std::size_t row = 0; row < coeffs.size(); ++row)
      for (auto& [o, c] : coeffs[row]) grad(row, o) = c.grad()[0];
    double total = loss.item();
    if (table && alpha != 0) {
      Eigen::MatrixXd g_res;
      const double t = proposal::resource_deviation(d.mix.weights(), *table, &g_res);
      grad += alpha * g_res;
      total += alpha * t;
      state.resource_trace.push_back(t);
    } else if (table) {
      state.resource_trace.push_back(proposal::resource_deviation(d.mix.weights(), *table));
    }
    state.val_loss_trace.push_back(total);

    const Eigen::VectorXd weights = d.pi.arch.weights().row(0).transpose();
    Eigen::VectorXd g_pi;
    std::vector<Eigen::MatrixXd> g_samples;
    proposal::ensemble_backward(weights, d.samples, grad, g_pi, g_samples);
    for (std::size_t j = 0; j < thetas.size(); ++j) {
      Eigen::MatrixXd gt = proposal::sample_backward(d.samples[j], g_samples[j]);
      theta_slots[j].apply(std::span<double>(thetas[j].data(), static_cast<std::size_t>(gt.size())),
                           std::span<double>(gt.data(), static_cast<std::size_t>(gt.size())),
                           optim::AdamOptions{cfg.lr_arch});
    }
    if (pi.size() > 1) {
      Eigen::MatrixXd gp = proposal::sample_backward(d.pi, g_pi.transpose());
      pi_slot.apply(std::span<double>(pi.data(), static_cast<std::size_t>(pi.size())),
                    std::span<double>(gp.data(), static_cast<std::size_t>(gp.size())),
                    optim::AdamOptions{cfg.lr_arch});
    }
    ++state.arch_steps;
    ++state.iteration;
  }

  void run_epochs(std::size_t epochs, const data::Dataset& ds, const data::Split& split, Rng& rng,
                  const std::string& stage) {
    if (split.train_indices.empty() || split.val_indices.empty()) throw DataError("search: empty train or val split");
    for (std::size_t e = 0; e < epochs; ++e) {
      auto train = make_batches(ds, split.train_indices, cfg.batch_size, DataSource::train, rng);
      auto val = make_batches(ds, split.val_indices, cfg.batch_size, DataSource::val, rng);
      for (std::size_t k = 0; k < train.size(); ++k) {
        weight_update(train[k], rng);
        arch_update(val[k % val.size()], rng);
      }
      if (cfg.checkpoint_dir) {
        NamedTensors extra;
        for (std::size_t j = 0; j < thetas.size(); ++j) {
          const auto& t = thetas[j];
          Tensor tt(Shape{static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())});
          // Row-major copy; -inf pins stay -inf.
          for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) tt.data()[r * t.cols() + c] = static_cast<Real>(t(r, c));
          extra.emplace_back("arch.theta." + std::to_string(j), tt);
        }
        Tensor tp(Shape{static_cast<std::size_t>(pi.size())});
        for (Eigen::Index j = 0; j < pi.size(); ++j) tp.data()[j] = static_cast<Real>(pi(j));
        extra.emplace_back("arch.pi", tp);
        std::filesystem::create_directories(*cfg.checkpoint_dir);
        save_network(*cfg.checkpoint_dir / (stage + "_epoch" + std::to_string(e + 1) + ".ckpt"), net, extra);
      }
    }
  }
};

}  // namespace

double weight_step(model::Network& net, const Batch& batch, const std::vector<model::LayerRoute>& routes,
                   double lr) {
  if (batch.source != DataSource::train) throw Error("search: weight update on a non-train batch");
  return sgd_on_batch(net, batch, &routes, lr);
}

std::vector<std::size_t> search_vital(model::Network& vital_net, const data::Dataset& ds, const data::Split& split,
                                      const SearchConfig& cfg, SearchState& state, Rng& rng) {
  cfg.validate();
  state.phase = Phase::vital;
  const auto& spec = vital_net.spec();
  std::vector<std::size_t> rows(spec.num_layers());
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
  std::vector<Eigen::MatrixXd> thetas{theta_for_layers(spec, rows)};
  Eigen::VectorXd pi = Eigen::VectorXd::Zero(1);
  ArchSearch s(vital_net, thetas, pi, rows, std::vector<std::optional<std::size_t>>(spec.num_layers()), nullptr, 0.0,
               cfg.vital_sampler, cfg, state);
  s.run_epochs(cfg.epochs_vital, ds, split, rng, "stage1");
  state.theta_vital = thetas[0];
  state.vital_choices = argmax_rows(state.theta_vital);
  state.phase = Phase::proposal_fit;
  return state.vital_choices;
}

void search_nonvital(model::Network& net, const data::Dataset& ds, const data::Split& split, const SearchConfig& cfg,
                     SearchState& state, Rng& rng) {
  cfg.validate();
  const auto& spec = net.spec();
  state.proposals.validate();
  if (static_cast<std::size_t>(state.proposals.thetas[0].rows()) != state.table.rows() ||
      static_cast<std::size_t>(state.proposals.thetas[0].cols()) != state.table.cols())
    throw ConfigError("search: proposals cover " + std::to_string(state.proposals.thetas[0].rows()) +
                      " layers, the resource table has " + std::to_string(state.table.rows()));
  if (state.vital_choices.size() != state.vital_layers.size())
    throw Error("search: vital choices do not match the vital layers");
  std::vector<std::optional<std::size_t>> fixed(spec.num_layers());
  for (std::size_t k = 0; k < state.vital_layers.size(); ++k) fixed[state.vital_layers[k]] = state.vital_choices[k];
  state.searched_layers = state.table.layer_ids;
  for (auto l : state.searched_layers)
    if (fixed[l]) throw Error("search: layer " + std::to_string(l) + " is both fixed and searched");

  state.phase = Phase::nonvital;
  ArchSearch s(net, state.proposals.thetas, state.proposals.pi_logits, state.searched_layers, fixed, &state.table,
               cfg.alpha, cfg.sampler, cfg, state);
  const std::size_t epochs = cfg.vital_priori ? cfg.epochs_nonvital : cfg.epochs_vital + cfg.epochs_nonvital;
  s.run_epochs(epochs, ds, split, rng, "stage2");
  state.phase = Phase::done;
}

space::ArchMatrix derive_final(const SearchState& state, const space::SuperNetSpec& net) {
  if (state.phase != Phase::done) throw Error("derive_final: search is in phase " + phase_name(state.phase));
  std::vector<std::size_t> choices(net.num_layers(), net.num_ops());
  for (std::size_t k = 0; k < state.vital_layers.size(); ++k) choices[state.vital_layers[k]] = state.vital_choices[k];
  const auto& pi = state.proposals.pi_logits;
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < pi.size(); ++j)
    if (pi(j) > pi(best)) best = j;
  const auto rows = argmax_rows(state.proposals.thetas[static_cast<std::size_t>(best)]);
  for (std::size_t r = 0; r < state.searched_layers.size(); ++r) choices[state.searched_layers[r]] = rows[r];
  for (std::size_t l = 0; l < choices.size(); ++l)
    if (choices[l] >= net.num_ops()) throw Error("derive_final: layer " + std::to_string(l) + " has no choice");
  return space::ArchMatrix::one_hot(choices, net.num_ops());
}

std::map<space::Objective, double> resolve_targets(const space::SuperNetSpec& net,
                                                   const std::map<space::Objective, space::TargetSpec>& targets) {
  const auto table = space::build_resource_table(net, targets);
  std::map<space::Objective, double> out;
  for (std::size_t i = 0; i < table.num_objectives(); ++i) out[table.objectives[i]] = table.targets[i];
  return out;
}

double architecture_cost(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices,
                         space::Objective objective) {
  if (choices.size() != net.num_layers()) throw ShapeError("architecture_cost: wrong number of choices");
  double total = space::fixed_cost(net, objective);
  for (std::size_t l = 0; l < choices.size(); ++l)
    total += space::op_cost(net.layers[l].candidates.at(choices[l]), net.layers[l], objective);
  return total;
}

SearchResult run_search(const space::SuperNetSpec& net, const data::Dataset& ds, const data::Split& split,
                        const std::map<space::Objective, space::TargetSpec>& targets, const SearchConfig& cfg) {
  cfg.validate();
  net.validate();
  SearchResult res;
  auto& state = res.state;
  res.targets = resolve_targets(net, targets);
  std::map<space::Objective, space::TargetSpec> absolute;
  for (auto [o, v] : res.targets) absolute[o] = {v, false};

  Rng rng(cfg.seed);
  Rng init_rng = rng.split();
  state.vital = vitality::vital_by_rule(net);
  state.tau = cfg.tau0;

  std::vector<std::optional<std::size_t>> pinned(net.num_layers());
  std::map<std::string, Tensor> warm;
  if (cfg.vital_priori) {
    state.vital_layers = state.vital.vital_layers();
    const auto vspec = build_vital_supernet(net, state.vital);
    model::Network vnet(vspec, init_rng);
    search_vital(vnet, ds, split, cfg, state, rng);
    for (std::size_t k = 0; k < state.vital_layers.size(); ++k) pinned[state.vital_layers[k]] = state.vital_choices[k];
    for (auto& [name, t] : vnet.named_parameters()) {
      std::string mapped = name;
      if (name.rfind("layers.", 0) == 0) {
        const auto dot = name.find('.', 7);
        const auto idx = std::stoul(name.substr(7, dot - 7));
        mapped = "layers." + std::to_string(state.vital_layers[idx]) + name.substr(dot);
      }
      warm[mapped] = t;
    }
  }
  state.phase = Phase::proposal_fit;
  state.table = space::build_resource_table(net, absolute, pinned);
  proposal::FitOptions fit;
  fit.m = cfg.m;
  fit.iterations = cfg.proposal_iterations;
  fit.beta = cfg.beta;
  fit.alpha = cfg.alpha;
  fit.tau = cfg.proposal_tau;
  fit.draws = cfg.proposal_draws;
  state.proposals = proposal::optimize_proposals(state.table, fit, rng);

  model::Network full(net, init_rng);
  if (!warm.empty()) model::copy_parameters(warm, full);
  search_nonvital(full, ds, split, cfg, state, rng);

  res.arch = derive_final(state, net);
  res.choices = res.arch.choices();
  for (auto o : state.table.objectives) res.resources.push_back(architecture_cost(net, res.choices, o));
  return res;
}

// ---------------------------------------------------------------------------

std::vector<double> train_network(model::Network& net, const data::Dataset& ds,
                                  std::span<const std::size_t> train_indices, const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw ConfigError("train: epochs must be positive");
  Rng rng(cfg.seed ^ 0x5eed5eedULL);
  std::vector<double> trace;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double sum = 0;
    auto batches = make_batches(ds, train_indices, cfg.batch_size, DataSource::train, rng);
    for (const auto& b : batches) sum += sgd_on_batch(net, b, nullptr, cfg.lr);
    trace.push_back(sum / static_cast<double>(batches.size()));
  }
  const std::size_t n = std::min(train_indices.size(), cfg.calibration_samples);
  model::calibrate(net, ds.gather_images(train_indices.subspan(0, n)));
  return trace;
}

RetrainResult retrain(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices,
                      const data::Dataset& ds, const data::Split& split, const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  RetrainResult r;
  r.network = std::make_shared<model::Network>(model::discrete_spec(net, choices), rng);
  r.loss_trace = train_network(*r.network, ds, split.train_indices, cfg);
  r.accuracy = vitality::accuracy(*r.network, ds.subset(split.val_indices));
  return r;
}

}  // namespace hournas::search
