#include "hournas/proposal.hpp"

#include <cmath>
#include <limits>

#include "hournas/json_util.hpp"
#include "hournas/optim.hpp"

namespace hournas::proposal {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_logits(const Eigen::MatrixXd& theta, const char* where) {
  for (Eigen::Index r = 0; r < theta.rows(); ++r) {
    bool any = false;
    for (Eigen::Index c = 0; c < theta.cols(); ++c) {
      const double v = theta(r, c);
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw ConfigError(std::string(where) + ": non-finite logit in row " + std::to_string(r));
      any = any || std::isfinite(v);
    }
    if (!any) throw ConfigError(std::string(where) + ": row " + std::to_string(r) + " has no finite logit");
  }
}

Eigen::Index argmax_row(const Eigen::MatrixXd& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return best;
}

}  // namespace

std::string sampler_name(SamplerVariant v) {
  switch (v) {
    case SamplerVariant::softmax:
      return "softmax";
    case SamplerVariant::gumbel_softmax:
      return "gumbel_softmax";
    case SamplerVariant::gumbel_max:
      return "gumbel_max";
  }
  return "?";
}

SamplerVariant parse_sampler(const std::string& name) {
  if (name == "softmax") return SamplerVariant::softmax;
  if (name == "gumbel_softmax") return SamplerVariant::gumbel_softmax;
  if (name == "gumbel_max") return SamplerVariant::gumbel_max;
  throw ConfigError("unknown sampler '" + name + "' (softmax, gumbel_softmax, gumbel_max)");
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& theta, double tau) {
  if (!(tau > 0)) throw ConfigError("sampler: tau must be positive");
  Eigen::MatrixXd y(theta.rows(), theta.cols());
  for (Eigen::Index r = 0; r < theta.rows(); ++r) {
    const double mx = theta.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index c = 0; c < theta.cols(); ++c) {
      y(r, c) = theta(r, c) == kNegInf ? 0.0 : std::exp((theta(r, c) - mx) / tau);
      sum += y(r, c);
    }
    y.row(r) /= sum;
  }
  return y;
}

ArchSample sample_arch(const Eigen::MatrixXd& theta, const SamplerKind& sampler, Rng& rng) {
  check_logits(theta, "sample_arch");
  if (!(sampler.tau > 0)) throw ConfigError("sample_arch: tau must be positive");
  Eigen::MatrixXd z = theta;
  if (sampler.variant != SamplerVariant::softmax)
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < z.cols(); ++c)
        if (z(r, c) != kNegInf) z(r, c) += rng.gumbel();
  ArchSample s;
  s.tau = sampler.tau;
  s.relaxed = softmax_rows(z, sampler.tau);
  if (sampler.variant == SamplerVariant::gumbel_max) {
    std::vector<std::size_t> choice(z.rows());
    for (Eigen::Index r = 0; r < z.rows(); ++r) choice[r] = static_cast<std::size_t>(argmax_row(z, r));
    s.arch = space::ArchMatrix::one_hot(choice, z.cols());
  } else {
    s.arch = space::ArchMatrix(s.relaxed);
  }
  return s;
}

Eigen::MatrixXd sample_backward(const ArchSample& sample, const Eigen::MatrixXd& grad_arch) {
  const auto& y = sample.relaxed;
  if (grad_arch.rows() != y.rows() || grad_arch.cols() != y.cols())
    throw ShapeError("sample_backward: gradient shape does not match the sample");
  Eigen::MatrixXd out(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double dot = grad_arch.row(r).dot(y.row(r));
    out.row(r) = (y.row(r).array() * (grad_arch.row(r).array() - dot)).matrix() / sample.tau;
  }
  return out;
}

double resource_deviation(const Eigen::MatrixXd& arch, const space::ResourceTable& table, Eigen::MatrixXd* grad) {
  const std::size_t n = table.num_objectives();
  if (grad) *grad = Eigen::MatrixXd::Zero(arch.rows(), arch.cols());
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = table.costs[i];
    if (f.rows() != arch.rows() || f.cols() != arch.cols())
      throw ShapeError("resource_deviation: architecture does not match the resource table");
    const double r = arch.cwiseProduct(f).sum() + table.fixed[i];
    const double d = r - table.targets[i];
    total += std::abs(d) / table.normalizer[i];
    if (grad && d != 0) *grad += f * ((d > 0 ? 1.0 : -1.0) / (table.normalizer[i] * static_cast<double>(n)));
  }
  return total / static_cast<double>(n);
}

double proposal_objective(const std::vector<Eigen::MatrixXd>& thetas, const space::ResourceTable& table,
                          const SamplerKind& sampler, Rng& rng, std::vector<Eigen::MatrixXd>* grads) {
  if (thetas.empty()) throw ConfigError("proposal_objective: no proposals");
  const double m = static_cast<double>(thetas.size());
  if (grads) grads->assign(thetas.size(), {});
  double total = 0;
  for (std::size_t j = 0; j < thetas.size(); ++j) {
    const auto s = sample_arch(thetas[j], sampler, rng);
    Eigen::MatrixXd g;
    total += resource_deviation(s.arch.weights(), table, grads ? &g : nullptr);
    if (grads) (*grads)[j] = sample_backward(s, g) / m;
  }
  return total / m;
}

namespace {

struct UnitRows {
  std::vector<Eigen::VectorXd> u;
  std::vector<double> norm;
  std::vector<Eigen::MatrixXd> probs;
};

UnitRows unit_rows(const std::vector<Eigen::MatrixXd>& thetas, double tau) {
  UnitRows out;
  for (const auto& t : thetas) {
    check_logits(t, "orthogonality_penalty");
    out.probs.push_back(softmax_rows(t, tau));
    const auto& p = out.probs.back();
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
    out.norm.push_back(flat.norm());
    out.u.push_back(flat / out.norm.back());
  }
  return out;
}

}  // namespace

double orthogonality_penalty(const std::vector<Eigen::MatrixXd>& thetas, double tau,
                             std::vector<Eigen::MatrixXd>* grads) {
  const std::size_t m = thetas.size();
  if (m == 0) throw ConfigError("orthogonality_penalty: no proposals");
  const auto rows = unit_rows(thetas, tau);
  double penalty = 0;
  std::vector<Eigen::VectorXd> gu(m, Eigen::VectorXd::Zero(rows.u[0].size()));
  // The diagonal of U U^T is identically 1 for unit rows, so |O - I| has
  // only off-diagonal terms; summing them directly avoids rounding residue.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const double o = rows.u[i].dot(rows.u[j]);
      penalty += std::abs(o);
      if (o != 0) gu[i] += 2.0 * (o > 0 ? 1.0 : -1.0) * rows.u[j];
    }
  if (grads) {
    grads->clear();
    for (std::size_t i = 0; i < m; ++i) {
      // u = p / |p|  =>  dp = (gu - <gu, u> u) / |p|, then the softmax backward.
      const Eigen::VectorXd gp = (gu[i] - gu[i].dot(rows.u[i]) * rows.u[i]) / rows.norm[i];
      ArchSample s;
      s.relaxed = rows.probs[i];
      s.tau = tau;
      grads->push_back(sample_backward(s, Eigen::Map<const Eigen::MatrixXd>(gp.data(), s.relaxed.rows(), s.relaxed.cols())));
    }
  }
  return penalty;
}

double mean_pairwise_overlap(const std::vector<Eigen::MatrixXd>& thetas, double tau) {
  const std::size_t m = thetas.size();
  if (m < 2) return 0.0;
  const auto rows = unit_rows(thetas, tau);
  double sum = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) sum += std::abs(rows.u[i].dot(rows.u[j]));
  return sum / static_cast<double>(m * (m - 1) / 2);
}

void ProposalSet::validate() const {
  if (thetas.empty()) throw ConfigError("proposals: m must be >= 1");
  if (static_cast<std::size_t>(pi_logits.size()) != thetas.size())
    throw ConfigError("proposals: Pi has " + std::to_string(pi_logits.size()) + " entries for " +
                      std::to_string(thetas.size()) + " proposals");
  if (!pi_logits.allFinite()) throw ConfigError("proposals: Pi logits must be finite");
  for (const auto& t : thetas) {
    if (t.rows() != thetas[0].rows() || t.cols() != thetas[0].cols())
      throw ConfigError("proposals: theta shapes differ");
    check_logits(t, "proposals");
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        if ((t(r, c) == kNegInf) != (thetas[0](r, c) == kNegInf))
          throw ConfigError("proposals: proposals disagree on disallowed entries");
  }
}

Eigen::MatrixXd init_theta(const space::ResourceTable& table, double init_std, Rng& rng) {
  Eigen::MatrixXd t(table.rows(), table.cols());
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c)
      t(r, c) = table.allowed(r, c) ? rng.normal() * init_std : kNegInf;
  return t;
}

ProposalSet optimize_proposals(const space::ResourceTable& table, const FitOptions& opt, Rng& rng) {
  if (opt.m == 0) throw ConfigError("optimize_proposals: m must be >= 1");
  if (opt.draws == 0) throw ConfigError("optimize_proposals: draws must be >= 1");
  if (opt.iterations == 0) throw ConfigError("optimize_proposals: iterations must be >= 1");
  if (table.rows() == 0) throw ConfigError("optimize_proposals: no searchable rows");
  ProposalSet set;
  set.alpha = opt.alpha;
  set.beta = opt.beta;
  set.tau = opt.tau;
  for (std::size_t j = 0; j < opt.m; ++j) set.thetas.push_back(init_theta(table, opt.init_std, rng));
  set.pi_logits = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(opt.m));

  const optim::AdamOptions adam{opt.lr};
  std::vector<optim::AdamSlot<double>> slots(opt.m);
  const SamplerKind sampler{opt.sampler, opt.tau};
  std::vector<Eigen::MatrixXd> g_obj, g_pen;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    double obj = 0;
    std::vector<Eigen::MatrixXd> g_draw;
    for (std::size_t d = 0; d < opt.draws; ++d) {
      obj += proposal_objective(set.thetas, table, sampler, rng, &g_draw) / static_cast<double>(opt.draws);
      if (d == 0) g_obj = g_draw;
      else
        for (std::size_t j = 0; j < opt.m; ++j) g_obj[j] += g_draw[j];
    }
    if (opt.draws > 1)
      for (auto& g : g_obj) g /= static_cast<double>(opt.draws);
    const double pen = orthogonality_penalty(set.thetas, opt.tau, opt.beta != 0 ? &g_pen : nullptr);
    set.objective_trace.push_back(obj + opt.beta * pen);
    set.penalty_trace.push_back(pen);
    for (std::size_t j = 0; j < opt.m; ++j) {
      Eigen::MatrixXd g = g_obj[j];
      if (opt.beta != 0) g += opt.beta * g_pen[j];
      // -inf pins have zero probability and therefore zero gradient.
      for (Eigen::Index k = 0; k < g.size(); ++k)
        if (set.thetas[j](k) == kNegInf) g(k) = 0;
      slots[j].apply(std::span<double>(set.thetas[j].data(), static_cast<std::size_t>(g.size())),
                     std::span<double>(g.data(), static_cast<std::size_t>(g.size())), adam);
    }
  }
  set.validate();
  return set;
}

ArchSample sample_mixture(const Eigen::VectorXd& pi_logits, const SamplerKind& sampler, Rng& rng) {
  if (pi_logits.size() == 0) throw ConfigError("sample_mixture: m must be >= 1");
  const Eigen::MatrixXd row = pi_logits.transpose();
  return sample_arch(row, sampler, rng);
}

space::ArchMatrix ensemble_arch(const Eigen::VectorXd& pi, const std::vector<ArchSample>& samples) {
  if (static_cast<std::size_t>(pi.size()) != samples.size() || samples.empty())
    throw ShapeError("ensemble_arch: |pi| must equal the number of proposal samples");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(samples[0].arch.weights().rows(), samples[0].arch.weights().cols());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (pi(j) != 0) a += pi(j) * samples[j].arch.weights();
  }
  return space::ArchMatrix(std::move(a));
}

void ensemble_backward(const Eigen::VectorXd& pi, const std::vector<ArchSample>& samples, const Eigen::MatrixXd& grad,
                       Eigen::VectorXd& grad_pi, std::vector<Eigen::MatrixXd>& grad_samples) {
  grad_pi.resize(pi.size());
  grad_samples.clear();
  for (std::size_t j = 0; j < samples.size(); ++j) {
    grad_pi(j) = grad.cwiseProduct(samples[j].arch.weights()).sum();
    grad_samples.push_back(pi(j) * grad);
  }
}

nlohmann::json to_json(const ProposalSet& set, const space::ResourceTable& table) {
  using jsonutil::fixed;
  nlohmann::json thetas = nlohmann::json::array();
  for (const auto& t : set.thetas) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        row.push_back(t(r, c) == kNegInf ? nlohmann::json(nullptr) : nlohmann::json(t(r, c)));
      rows.push_back(row);
    }
    thetas.push_back(rows);
  }
  nlohmann::json pi = nlohmann::json::array();
  for (Eigen::Index j = 0; j < set.pi_logits.size(); ++j) pi.push_back(set.pi_logits(j));
  nlohmann::json targets = nlohmann::json::object();
  for (std::size_t i = 0; i < table.num_objectives(); ++i)
    targets[space::objective_name(table.objectives[i])] = fixed(table.targets[i]);
  nlohmann::json trace = nlohmann::json::array(), penalty = nlohmann::json::array();
  for (double v : set.objective_trace) trace.push_back(fixed(v));
  for (double v : set.penalty_trace) penalty.push_back(fixed(v));
  return {{"m", set.m()},        {"alpha", set.alpha}, {"beta", set.beta},   {"tau", set.tau},
          {"thetas", thetas},    {"pi", pi},           {"targets", targets}, {"objective_trace", trace},
          {"penalty_trace", penalty}};
}

ProposalSet proposals_from_json(const nlohmann::json& j) {
  using namespace jsonutil;
  require_keys(j, {"m", "alpha", "beta", "tau", "thetas", "pi", "targets", "objective_trace", "penalty_trace"},
               "proposals");
  ProposalSet set;
  set.alpha = get_or<double>(j, "alpha", 5.0, "proposals");
  set.beta = get_or<double>(j, "beta", 1e-2, "proposals");
  set.tau = get_or<double>(j, "tau", 1.0, "proposals");
  try {
    for (const auto& t : j.at("thetas")) {
      const auto rows = static_cast<Eigen::Index>(t.size());
      const auto cols = rows ? static_cast<Eigen::Index>(t[0].size()) : 0;
      Eigen::MatrixXd m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(t[r].size()) != cols) throw ConfigError("proposals: ragged theta");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = t[r][c].is_null() ? kNegInf : t[r][c].get<double>();
      }
      set.thetas.push_back(std::move(m));
    }
    const auto& pi = j.at("pi");
    set.pi_logits.resize(static_cast<Eigen::Index>(pi.size()));
    for (std::size_t k = 0; k < pi.size(); ++k) set.pi_logits(static_cast<Eigen::Index>(k)) = pi[k].get<double>();
    if (j.contains("objective_trace")) set.objective_trace = j["objective_trace"].get<std::vector<double>>();
    if (j.contains("penalty_trace")) set.penalty_trace = j["penalty_trace"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("proposals: ") + e.what());
  }
  if (j.contains("m") && j["m"].get<std::size_t>() != set.m()) throw ConfigError("proposals: m disagrees with thetas");
  set.validate();
  return set;
}

Eigen::MatrixXd sample_costs(const ProposalSet& set, const space::ResourceTable& table, double tau,
                             std::size_t count, Rng& rng) {
  set.validate();
  const std::size_t n = table.num_objectives();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n));
  const SamplerKind pick{SamplerVariant::gumbel_max, 1.0};
  const SamplerKind draw{SamplerVariant::gumbel_softmax, tau};
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t j = 0;
    if (set.m() > 1) j = sample_mixture(set.pi_logits, pick, rng).arch.choices()[0];
    const auto a = sample_arch(set.thetas[j], draw, rng);
    for (std::size_t i = 0; i < n; ++i)
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = space::resource_of(a.arch, table, i);
  }
  return out;
}

double fraction_within(const Eigen::MatrixXd& costs, const space::ResourceTable& table, double rel) {
  if (costs.rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index s = 0; s < costs.rows(); ++s) {
    bool ok = true;
    for (std::size_t i = 0; i < table.num_objectives(); ++i)
      ok = ok && std::abs(costs(s, static_cast<Eigen::Index>(i)) - table.targets[i]) <= rel * table.targets[i];
    hits += ok;
  }
  return static_cast<double>(hits) / static_cast<double>(costs.rows());
}

}  // namespace hournas::proposal
