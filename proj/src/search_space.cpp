#include "hournas/search_space.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

namespace hournas::space {

std::string OpSpec::name() const {
  switch (kind) {
    case OpKind::skip:
      return "skip";
    case OpKind::disallowed:
      return "disallowed";
    case OpKind::mbconv: {
      std::string s = "mbconv_k" + std::to_string(kernel) + "_e" + std::to_string(expansion);
      if (groups != 1) s += "_g" + std::to_string(groups);
      return s;
    }
  }
  return "?";
}

Resolution downsample(Resolution r, std::size_t stride) {
  return {(r.height + stride - 1) / stride, (r.width + stride - 1) / stride};
}

bool admissible(const OpSpec& op, const LayerSpec& layer) {
  switch (op.kind) {
    case OpKind::disallowed:
      return false;
    case OpKind::skip:
      return layer.shape_preserving();
    case OpKind::mbconv: {
      if (op.kernel == 0 || op.kernel % 2 == 0 || op.expansion == 0 || op.groups == 0) return false;
      const std::size_t hidden = layer.in_channels * op.expansion;
      return layer.in_channels % op.groups == 0 && hidden % op.groups == 0 &&
             layer.out_channels % op.groups == 0;
    }
  }
  return false;
}

void SuperNetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("space: num_classes must be >= 2");
  if (stem.kernel % 2 == 0 || stem.stride == 0 || stem.in_channels == 0 || stem.out_channels == 0)
    throw ConfigError("space: stem needs an odd kernel and positive channels/stride");
  if (stem.input_resolution.height == 0 || stem.input_resolution.width == 0)
    throw ConfigError("space: input resolution must be positive");
  std::size_t channels = stem.out_channels;
  Resolution res = stem.output_resolution();
  const std::size_t ops = num_ops();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "space: layer " + std::to_string(i);
    if (l.index != i) throw ConfigError(where + ": index field is " + std::to_string(l.index));
    if (l.in_channels != channels)
      throw ConfigError(where + ": in_channels " + std::to_string(l.in_channels) +
                        " does not match previous output " + std::to_string(channels));
    if (!(l.input_resolution == res))
      throw ConfigError(where + ": input resolution does not chain from the previous layer");
    if (l.stride != 1 && l.stride != 2) throw ConfigError(where + ": stride must be 1 or 2");
    if (l.out_channels == 0) throw ConfigError(where + ": out_channels must be positive");
    if (l.candidates.size() != ops)
      throw ConfigError(where + ": has " + std::to_string(l.candidates.size()) + " candidates, expected " +
                        std::to_string(ops));
    bool any = false;
    for (const auto& op : l.candidates) {
      if (op.allowed() && !admissible(op, l))
        throw ConfigError(where + ": op " + op.name() + " is not admissible");
      any = any || op.allowed();
    }
    if (!any) throw ConfigError(where + ": no admissible candidate");
    channels = l.out_channels;
    res = l.output_resolution();
  }
  if (head.in_channels != channels)
    throw ConfigError("space: head in_channels " + std::to_string(head.in_channels) +
                      " does not match last layer output " + std::to_string(channels));
  if (head.num_classes != num_classes) throw ConfigError("space: head num_classes mismatch");
}

SuperNetSpec make_supernet(const StemSpec& stem, const std::vector<LayerPlan>& plans,
                           const std::vector<OpSpec>& catalog, std::size_t num_classes) {
  SuperNetSpec net;
  net.stem = stem;
  net.num_classes = num_classes;
  Resolution res = stem.output_resolution();
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    LayerSpec l;
    l.index = i;
    l.in_channels = p.in_channels;
    l.out_channels = p.out_channels;
    l.stride = p.stride;
    l.input_resolution = res;
    l.candidates = p.candidates ? *p.candidates : catalog;
    for (auto& op : l.candidates)
      if (!admissible(op, l)) op = OpSpec::disallowed();
    res = l.output_resolution();
    net.layers.push_back(std::move(l));
  }
  net.head.in_channels = plans.empty() ? stem.out_channels : plans.back().out_channels;
  net.head.num_classes = num_classes;
  net.validate();
  return net;
}

std::vector<OpSpec> default_catalog() {
  return {OpSpec::mbconv(3, 1), OpSpec::mbconv(3, 3), OpSpec::mbconv(5, 3), OpSpec::mbconv(3, 6),
          OpSpec::skip()};
}

SuperNetSpec default_space(std::size_t in_channels, Resolution input, std::size_t num_classes) {
  StemSpec stem{in_channels, 8, 3, 1, input};
  const std::vector<LayerPlan> plans = {
      {8, 8, 1, {}},   {8, 16, 2, {}},  {16, 16, 1, {}}, {16, 16, 1, {}}, {16, 24, 2, {}},
      {24, 24, 1, {}}, {24, 24, 1, {}}, {24, 32, 1, {}}, {32, 32, 1, {}},
  };
  return make_supernet(stem, plans, default_catalog(), num_classes);
}

std::string objective_name(Objective o) { return o == Objective::flops ? "flops" : "params"; }

Objective parse_objective(const std::string& name) {
  if (name == "flops") return Objective::flops;
  if (name == "params") return Objective::params;
  throw ConfigError("unknown objective '" + name + "' (expected flops or params)");
}

double conv_macs(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t groups, Resolution out) {
  return static_cast<double>(out.height * out.width) * static_cast<double>(cin / groups) *
         static_cast<double>(kernel * kernel) * static_cast<double>(cout);
}

double op_cost(const OpSpec& op, const LayerSpec& layer, Objective objective) {
  if (op.kind == OpKind::disallowed || !admissible(op, layer))
    throw ConfigError("op_cost: " + op.name() + " is not admissible in layer " + std::to_string(layer.index));
  if (op.kind == OpKind::skip) return 0.0;
  const std::size_t cin = layer.in_channels, cout = layer.out_channels;
  const std::size_t hidden = cin * op.expansion, k = op.kernel, g = op.groups;
  if (objective == Objective::flops) {
    const Resolution in = layer.input_resolution, out = layer.output_resolution();
    return conv_macs(cin, hidden, 1, g, in) + conv_macs(hidden, hidden, k, hidden, out) +
           conv_macs(hidden, cout, 1, g, out);
  }
  const double expand = static_cast<double>(cin / g * hidden);
  const double depthwise = static_cast<double>(hidden * k * k);
  const double project = static_cast<double>(hidden / g * cout);
  const double bn = 2.0 * static_cast<double>(hidden + hidden + cout);
  return expand + depthwise + project + bn;
}

double fixed_cost(const SuperNetSpec& net, Objective objective) {
  const auto& s = net.stem;
  const auto& h = net.head;
  if (objective == Objective::flops)
    return conv_macs(s.in_channels, s.out_channels, s.kernel, 1, s.output_resolution()) +
           static_cast<double>(h.in_channels * h.num_classes);
  const double stem = static_cast<double>(s.in_channels * s.out_channels * s.kernel * s.kernel) +
                      2.0 * static_cast<double>(s.out_channels);
  const double head = static_cast<double>(h.in_channels * h.num_classes + h.num_classes);
  return stem + head;
}

TargetSpec parse_target(const std::string& text) {
  std::string t = text;
  t.erase(std::remove_if(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }), t.end());
  TargetSpec spec;
  auto pct = t.find('%');
  std::string number = t;
  if (pct != std::string::npos) {
    const std::string suffix = t.substr(pct + 1);
    if (!(suffix.empty() || suffix == "M"))
      throw ConfigError("target '" + text + "': expected forms like '300000' or '45%M'");
    spec.percent_of_max = true;
    number = t.substr(0, pct);
  }
  std::size_t used = 0;
  try {
    spec.value = std::stod(number, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != number.size() || number.empty() || !std::isfinite(spec.value) || spec.value < 0)
    throw ConfigError("target '" + text + "' is not a non-negative number");
  return spec;
}

std::vector<std::string> ResourceTable::objective_names() const {
  std::vector<std::string> names;
  for (auto o : objectives) names.push_back(objective_name(o));
  return names;
}

ResourceTable build_resource_table(const SuperNetSpec& net, const std::map<Objective, TargetSpec>& targets,
                                   const std::vector<std::optional<std::size_t>>& pinned) {
  if (targets.empty()) throw ConfigError("build_resource_table: at least one target is required");
  if (!pinned.empty() && pinned.size() != net.num_layers())
    throw ConfigError("build_resource_table: pinned choices cover " + std::to_string(pinned.size()) +
                      " layers, net has " + std::to_string(net.num_layers()));
  ResourceTable t;
  const std::size_t ops = net.num_ops();
  for (std::size_t l = 0; l < net.num_layers(); ++l)
    if (pinned.empty() || !pinned[l]) t.layer_ids.push_back(l);
  const std::size_t rows = t.layer_ids.size();

  t.allowed.resize(rows, ops);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < ops; ++o) t.allowed(r, o) = net.layers[t.layer_ids[r]].candidates[o].allowed();

  for (const auto& [objective, target] : targets) {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(rows, ops);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& layer = net.layers[t.layer_ids[r]];
      for (std::size_t o = 0; o < ops; ++o)
        if (layer.candidates[o].allowed()) f(r, o) = op_cost(layer.candidates[o], layer, objective);
    }
    double fixed = fixed_cost(net, objective);
    if (!pinned.empty())
      for (std::size_t l = 0; l < net.num_layers(); ++l)
        if (pinned[l]) {
          const auto& layer = net.layers[l];
          if (*pinned[l] >= ops || !layer.candidates[*pinned[l]].allowed())
            throw ConfigError("build_resource_table: pinned op " + std::to_string(*pinned[l]) + " in layer " +
                              std::to_string(l) + " is not allowed");
          fixed += op_cost(layer.candidates[*pinned[l]], layer, objective);
        }
    double hi = fixed, lo = fixed;
    for (std::size_t r = 0; r < rows; ++r) {
      double mx = 0, mn = std::numeric_limits<double>::infinity();
      for (std::size_t o = 0; o < ops; ++o)
        if (t.allowed(r, o)) {
          mx = std::max(mx, f(r, o));
          mn = std::min(mn, f(r, o));
        }
      hi += mx;
      lo += mn;
    }
    if (hi <= 0) throw ConfigError("build_resource_table: objective " + objective_name(objective) + " has zero range");
    const double absolute = target.percent_of_max ? target.value / 100.0 * hi : target.value;
    if (absolute > hi * (1 + 1e-12) || absolute < lo * (1 - 1e-12)) {
      std::ostringstream os;
      os << "unreachable target: " << objective_name(objective) << " = " << absolute
         << " outside achievable range [" << lo << ", " << hi << "]";
      throw ConfigError(os.str());
    }
    t.objectives.push_back(objective);
    t.costs.push_back(std::move(f));
    t.fixed.push_back(fixed);
    t.normalizer.push_back(hi);
    t.minimum.push_back(lo);
    t.targets.push_back(absolute);
  }
  return t;
}

ArchMatrix::ArchMatrix(Eigen::MatrixXd weights, double tol) : w_(std::move(weights)) {
  for (Eigen::Index r = 0; r < w_.rows(); ++r) {
    if ((w_.row(r).array() < 0).any() || !w_.row(r).allFinite())
      throw ShapeError("ArchMatrix: row " + std::to_string(r) + " has negative or non-finite entries");
    const double s = w_.row(r).sum();
    if (std::abs(s - 1.0) > tol)
      throw ShapeError("ArchMatrix: row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

ArchMatrix ArchMatrix::one_hot(const std::vector<std::size_t>& choices, std::size_t num_ops) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(choices.size()), num_ops);
  for (std::size_t l = 0; l < choices.size(); ++l) {
    if (choices[l] >= num_ops) throw ShapeError("ArchMatrix: choice out of range in row " + std::to_string(l));
    w(l, choices[l]) = 1.0;
  }
  return ArchMatrix(std::move(w));
}

ArchMatrix ArchMatrix::uniform(const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(allowed.rows(), allowed.cols());
  for (Eigen::Index r = 0; r < allowed.rows(); ++r) {
    const double cnt = static_cast<double>(allowed.row(r).count());
    for (Eigen::Index o = 0; o < allowed.cols(); ++o)
      if (allowed(r, o)) w(r, o) = 1.0 / cnt;
  }
  return ArchMatrix(std::move(w));
}

bool ArchMatrix::is_one_hot() const {
  for (Eigen::Index r = 0; r < w_.rows(); ++r) {
    int ones = 0;
    for (Eigen::Index o = 0; o < w_.cols(); ++o) {
      if (w_(r, o) == 1.0)
        ++ones;
      else if (w_(r, o) != 0.0)
        return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

std::vector<std::size_t> ArchMatrix::choices() const {
  std::vector<std::size_t> out(w_.rows());
  for (Eigen::Index r = 0; r < w_.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index o = 1; o < w_.cols(); ++o)
      if (w_(r, o) > w_(r, best)) best = o;
    out[r] = static_cast<std::size_t>(best);
  }
  return out;
}

double resource_of(const ArchMatrix& arch, const ResourceTable& table, std::size_t objective) {
  if (objective >= table.num_objectives()) throw ShapeError("resource_of: objective index out of range");
  const auto& f = table.costs[objective];
  if (arch.rows() != static_cast<std::size_t>(f.rows()) || arch.cols() != static_cast<std::size_t>(f.cols()))
    throw ShapeError("resource_of: architecture is " + std::to_string(arch.rows()) + "x" +
                     std::to_string(arch.cols()) + ", table is " + std::to_string(f.rows()) + "x" +
                     std::to_string(f.cols()));
  return arch.weights().cwiseProduct(f).sum() + table.fixed[objective];
}

std::vector<std::size_t> merge_choices(const ResourceTable& table, const std::vector<std::size_t>& row_choices,
                                       const std::vector<std::optional<std::size_t>>& pinned,
                                       std::size_t num_layers) {
  if (row_choices.size() != table.rows()) throw ShapeError("merge_choices: row count mismatch");
  std::vector<std::size_t> out(num_layers, 0);
  for (std::size_t l = 0; l < num_layers; ++l)
    if (!pinned.empty() && pinned[l]) out[l] = *pinned[l];
  for (std::size_t r = 0; r < table.rows(); ++r) out[table.layer_ids[r]] = row_choices[r];
  return out;
}

std::vector<std::size_t> allowed_ops(const LayerSpec& layer) {
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o < layer.candidates.size(); ++o)
    if (layer.candidates[o].allowed()) out.push_back(o);
  return out;
}

}  // namespace hournas::space
