#include "hournas/network.hpp"

#include <cmath>

namespace hournas::model {

namespace {

Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<Real>(rng.normal() * stddev);
  return t;
}

ConvBn make_conv_bn(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride, std::size_t groups,
                    bool relu, Rng& rng) {
  ConvBn cb;
  const double fan_in = static_cast<double>(cin / groups * kernel * kernel);
  cb.weight = random_normal(Shape{cout, cin / groups, kernel, kernel}, std::sqrt((relu ? 2.0 : 1.0) / fan_in), rng);
  cb.gamma = Tensor(Shape{cout}, std::vector<Real>(cout, Real(1)), true);
  cb.beta = Tensor(Shape{cout}, true);
  cb.conv = {stride, (kernel - 1) / 2, groups};
  cb.relu = relu;
  return cb;
}

Candidate make_candidate(const space::OpSpec& op, const space::LayerSpec& layer, Rng& rng) {
  Candidate c;
  c.op = op;
  if (op.kind != space::OpKind::mbconv) return c;
  const std::size_t hidden = layer.in_channels * op.expansion;
  c.convs.push_back(make_conv_bn(layer.in_channels, hidden, 1, 1, op.groups, true, rng));
  c.convs.push_back(make_conv_bn(hidden, hidden, op.kernel, layer.stride, hidden, true, rng));
  c.convs.push_back(make_conv_bn(hidden, layer.out_channels, 1, 1, op.groups, false, rng));
  c.shortcut = layer.shape_preserving();
  return c;
}

}  // namespace

Network::Network(space::SuperNetSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  const auto& s = spec_.stem;
  stem_ = make_conv_bn(s.in_channels, s.out_channels, s.kernel, s.stride, 1, true, rng);
  for (const auto& layer : spec_.layers) {
    std::vector<Candidate> cands;
    for (const auto& op : layer.candidates) cands.push_back(make_candidate(op, layer, rng));
    layers_.push_back(std::move(cands));
  }
  const std::size_t c = spec_.head.in_channels, k = spec_.num_classes;
  head_weight_ = random_normal(Shape{k, c}, std::sqrt(1.0 / static_cast<double>(c)), rng);
  head_bias_ = Tensor(Shape{k}, true);
}

Tensor Network::run_conv_bn(Graph& g, const Tensor& x, ConvBn& cb, Mode mode) {
  Tensor y = ops::conv2d(g, x, cb.weight, cb.conv);
  ops::BatchNormOptions bn;
  switch (mode) {
    case Mode::train:
      bn.training = true;
      break;
    case Mode::eval:
      bn.training = false;
      bn.stats = &cb.stats;
      break;
    case Mode::calibrate:
      bn.training = false;
      bn.capture = &cb.stats;
      break;
  }
  y = ops::batchnorm2d(g, y, cb.gamma, cb.beta, bn);
  return cb.relu ? ops::relu(g, y) : y;
}

Tensor Network::run_candidate(Graph& g, const Tensor& x, Candidate& c, Mode mode, const BlockMask* mask) {
  ++branch_executions_;
  if (c.op.kind == space::OpKind::disallowed) throw ConfigError("network: a disallowed op was routed");
  Tensor h = x;
  for (auto& cb : c.convs) h = run_conv_bn(g, h, cb, mode);
  if (c.zeroed) return ops::scale(g, h, Tensor::scalar(Real(0)));
  if (c.op.kind == space::OpKind::skip) return x;
  if (mask) h = ops::channel_mask(g, h, mask->mask);
  return c.shortcut ? ops::residual_add(g, x, h) : h;
}

Tensor Network::forward(Graph& g, const Tensor& images, const std::vector<LayerRoute>& routes,
                        const ForwardOptions& opt) {
  const std::size_t num_layers = spec_.layers.size();
  if (routes.size() != num_layers)
    throw ShapeError("network: " + std::to_string(routes.size()) + " routes for " + std::to_string(num_layers) +
                     " layers");
  if (images.rank() != 4 || images.dim(1) != spec_.stem.in_channels ||
      images.dim(2) != spec_.stem.input_resolution.height || images.dim(3) != spec_.stem.input_resolution.width)
    throw ShapeError("network: input shape " + to_string(images.shape()) + " does not match the space input");
  const auto mask_for = [&](std::size_t block) -> const BlockMask* {
    return opt.mask && opt.mask->block == block ? opt.mask : nullptr;
  };

  Tensor x = run_conv_bn(g, images, stem_, opt.mode);
  if (const auto* m = mask_for(0)) x = ops::channel_mask(g, x, m->mask);

  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& route = routes[l];
    if (route.branches.empty()) throw ShapeError("network: layer " + std::to_string(l) + " has no routed branch");
    Tensor sum;
    for (const auto& [op, coeff] : route.branches) {
      if (op >= layers_[l].size())
        throw ShapeError("network: op index " + std::to_string(op) + " out of range in layer " + std::to_string(l));
      Tensor y = run_candidate(g, x, layers_[l][op], opt.mode, mask_for(l + 1));
      if (coeff.tracked() || coeff.item() != Real(1)) y = ops::scale(g, y, coeff);
      sum = sum.defined() ? ops::residual_add(g, sum, y) : y;
    }
    x = sum;
  }

  Tensor pooled = ops::global_avg_pool(g, x);
  Tensor logits = ops::linear(g, pooled, head_weight_, head_bias_);
  if (const auto* m = mask_for(num_layers + 1)) logits = ops::channel_mask(g, logits, m->mask);
  return logits;
}

Tensor Network::forward(Graph& g, const Tensor& images, const std::vector<std::size_t>& choices,
                        const ForwardOptions& opt) {
  return forward(g, images, fixed_routes(choices), opt);
}

Tensor Network::forward(Graph& g, const Tensor& images, const ForwardOptions& opt) {
  for (const auto& l : layers_)
    if (l.size() != 1) throw ConfigError("network: supernet forward needs explicit routes");
  return forward(g, images, std::vector<std::size_t>(layers_.size(), 0), opt);
}

std::vector<LayerRoute> Network::fixed_routes(const std::vector<std::size_t>& choices) {
  std::vector<LayerRoute> routes;
  for (auto c : choices) routes.push_back({{{c, Tensor::scalar(Real(1))}}});
  return routes;
}

std::vector<std::pair<std::string, Tensor>> Network::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto add_cb = [&](const std::string& prefix, ConvBn& cb) {
    out.emplace_back(prefix + ".weight", cb.weight);
    out.emplace_back(prefix + ".gamma", cb.gamma);
    out.emplace_back(prefix + ".beta", cb.beta);
  };
  add_cb("stem", stem_);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    for (std::size_t o = 0; o < layers_[l].size(); ++o)
      for (std::size_t c = 0; c < layers_[l][o].convs.size(); ++c)
        add_cb("layers." + std::to_string(l) + ".op" + std::to_string(o) + ".conv" + std::to_string(c),
               layers_[l][o].convs[c]);
  out.emplace_back("head.weight", head_weight_);
  out.emplace_back("head.bias", head_bias_);
  return out;
}

std::vector<std::pair<std::string, ops::ChannelStats*>> Network::named_stats() {
  std::vector<std::pair<std::string, ops::ChannelStats*>> out;
  out.emplace_back("stem", &stem_.stats);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    for (std::size_t o = 0; o < layers_[l].size(); ++o)
      for (std::size_t c = 0; c < layers_[l][o].convs.size(); ++c)
        out.emplace_back("layers." + std::to_string(l) + ".op" + std::to_string(o) + ".conv" + std::to_string(c),
                         &layers_[l][o].convs[c].stats);
  return out;
}

std::vector<Tensor> Network::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

std::string Network::block_name(std::size_t block) const { return block_names(spec_).at(block); }

std::vector<std::string> block_names(const space::SuperNetSpec& spec) {
  std::vector<std::string> names{"stem"};
  std::size_t stage = 0, j = 0;
  for (const auto& l : spec.layers) {
    if (!l.shape_preserving()) {
      ++stage;
      j = 0;
    }
    ++j;
    names.push_back("block" + std::to_string(stage) + "_" + std::to_string(j));
  }
  names.emplace_back("head");
  return names;
}

space::SuperNetSpec discrete_spec(const space::SuperNetSpec& net, const std::vector<std::size_t>& choices) {
  if (choices.size() != net.num_layers())
    throw ConfigError("instantiate: " + std::to_string(choices.size()) + " choices for " +
                      std::to_string(net.num_layers()) + " layers");
  space::SuperNetSpec out = net;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layers[l];
    if (choices[l] >= layer.candidates.size() || !space::admissible(layer.candidates[choices[l]], layer))
      throw ConfigError("instantiate: layer " + std::to_string(l) + " selects inadmissible op #" +
                        std::to_string(choices[l]));
    out.layers[l].candidates = {layer.candidates[choices[l]]};
  }
  return out;
}

Network instantiate(const space::SuperNetSpec& net, const space::ArchMatrix& arch, Rng& rng) {
  if (arch.rows() != net.num_layers() || arch.cols() != net.num_ops())
    throw ConfigError("instantiate: architecture shape does not match the supernet");
  if (!arch.is_one_hot()) throw ConfigError("instantiate: architecture must be one-hot");
  return Network(discrete_spec(net, arch.choices()), rng);
}

std::size_t copy_parameters(const std::map<std::string, Tensor>& from, Network& to) {
  std::size_t copied = 0;
  for (auto& [name, t] : to.named_parameters()) {
    auto it = from.find(name);
    if (it == from.end() || it->second.shape() != t.shape()) continue;
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), t.data().begin());
    ++copied;
  }
  return copied;
}

void calibrate(Network& net, const Tensor& images) {
  Graph g = Graph::inference();
  net.forward(g, images, ForwardOptions{Mode::calibrate, nullptr});
}

}  // namespace hournas::model
