#include "hournas/vitality.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>

#include "hournas/json_util.hpp"

namespace hournas::vitality {

void BlockGraph::validate() const {
  const std::size_t n = nodes.size();
  if (successors.size() != n || source >= n || sink >= n) throw Error("block graph: malformed node tables");
  std::vector<std::size_t> indegree(n, 0);
  for (const auto& s : successors)
    for (auto v : s) {
      if (v >= n) throw Error("block graph: edge to a missing node");
      ++indegree[v];
    }
  for (std::size_t v = 0; v < n; ++v) {
    if (indegree[v] == 0 && v != source) throw Error("block graph: node " + std::to_string(v) + " is a second source");
    if (successors[v].empty() && v != sink) throw Error("block graph: node " + std::to_string(v) + " is a second sink");
  }
  if (indegree[source] != 0 || !successors[sink].empty()) throw Error("block graph: bad source/sink");
  // Kahn's algorithm; leftovers mean a cycle.
  std::vector<std::size_t> ready{source};
  std::size_t seen = 0;
  while (!ready.empty()) {
    auto v = ready.back();
    ready.pop_back();
    ++seen;
    for (auto w : successors[v])
      if (--indegree[w] == 0) ready.push_back(w);
  }
  if (seen != n) throw Error("block graph: cycle detected");
}

BlockGraph block_graph(const std::vector<bool>& residual) {
  using Kind = BlockGraph::Kind;
  BlockGraph g;
  g.num_layers = residual.size();
  const auto add = [&](Kind k, std::size_t layer = 0) {
    g.nodes.push_back({k, layer});
    g.successors.emplace_back();
    return g.nodes.size() - 1;
  };
  const auto edge = [&](std::size_t a, std::size_t b) { g.successors[a].push_back(b); };

  g.source = add(Kind::junction);
  auto stem = add(Kind::stem);
  edge(g.source, stem);
  auto junction = add(Kind::junction);
  edge(stem, junction);
  for (std::size_t l = 0; l < residual.size(); ++l) {
    auto block = add(Kind::layer, l);
    auto next = add(Kind::junction);
    edge(junction, block);
    edge(block, next);
    if (residual[l]) {
      edge(junction, next);
      ++g.residual_blocks;
    }
    junction = next;
  }
  auto head = add(Kind::head);
  edge(junction, head);
  g.sink = add(Kind::junction);
  edge(head, g.sink);
  g.validate();
  return g;
}

BlockGraph block_graph(const space::SuperNetSpec& net) {
  std::vector<bool> residual;
  for (const auto& l : net.layers) residual.push_back(l.shape_preserving());
  return block_graph(residual);
}

std::vector<Path> enumerate_paths(const BlockGraph& g) {
  if (g.residual_blocks > kMaxEnumeratedResiduals)
    throw Error("enumerate_paths: " + std::to_string(g.residual_blocks) + " residual blocks would give 2^" +
                std::to_string(g.residual_blocks) + " paths; refusing above 2^" +
                std::to_string(kMaxEnumeratedResiduals));
  g.validate();
  std::vector<Path> paths;
  Path current;
  std::function<void(std::size_t)> walk = [&](std::size_t v) {
    current.push_back(v);
    if (v == g.sink)
      paths.push_back(current);
    else
      for (auto w : g.successors[v]) walk(w);
    current.pop_back();
  };
  walk(g.source);
  return paths;
}

std::vector<std::size_t> VitalSet::vital_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < num_layers; ++l)
    if (is_vital_layer(l)) out.push_back(l);
  return out;
}

std::vector<std::size_t> VitalSet::nonvital_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < num_layers; ++l)
    if (!is_vital_layer(l)) out.push_back(l);
  return out;
}

VitalSet vital_by_intersection(const BlockGraph& g) {
  const auto paths = enumerate_paths(g);
  std::vector<std::size_t> hits(g.nodes.size(), 0);
  for (const auto& p : paths)
    for (auto v : p) ++hits[v];
  VitalSet vs{g.num_layers, {}};
  for (std::size_t v = 0; v < g.nodes.size(); ++v) {
    if (hits[v] != paths.size()) continue;
    switch (g.nodes[v].kind) {
      case BlockGraph::Kind::junction:
        break;
      case BlockGraph::Kind::stem:
        vs.blocks.insert(0);
        break;
      case BlockGraph::Kind::layer:
        vs.blocks.insert(g.nodes[v].layer + 1);
        break;
      case BlockGraph::Kind::head:
        vs.blocks.insert(g.num_layers + 1);
        break;
    }
  }
  return vs;
}

VitalSet vital_by_rule(const space::SuperNetSpec& net) {
  VitalSet vs{net.num_layers(), {0, net.num_layers() + 1}};
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layers[l];
    if (layer.stride != 1 || layer.out_channels != layer.in_channels) vs.blocks.insert(l + 1);
  }
  return vs;
}

std::vector<Real> draw_channel_mask(std::size_t channels, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mask: p = " + std::to_string(p) + " is outside [0, 1]");
  std::vector<Real> mask(channels);
  for (auto& m : mask) m = rng.bernoulli(p) ? Real(0) : Real(1);
  return mask;
}

Tensor mask_channels(const Tensor& y, double p, Rng& rng) {
  if (y.rank() < 2) throw ShapeError("mask: expected at least [N,C]");
  const auto mask = draw_channel_mask(y.dim(1), p, rng);
  Graph g = Graph::inference();
  return ops::channel_mask(g, y, mask);
}

double accuracy(model::Network& net, const data::Dataset& ds, const model::BlockMask* mask, std::size_t batch_size) {
  if (ds.size() == 0) throw DataError("accuracy: empty evaluation set");
  if (batch_size == 0) throw ConfigError("accuracy: batch size must be positive");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    Graph g = Graph::inference();
    Tensor logits = net.forward(g, ds.gather_images(idx), model::ForwardOptions{model::Mode::eval, mask});
    const auto pred = ops::argmax_rows(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == ds.labels[idx[k]];
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double ProbeReport::mean_drop(double p, bool vital) const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.p == p && r.vital == vital) {
      sum += r.baseline_accuracy - r.accuracy;
      ++n;
    }
  if (n == 0) throw Error("probe: no rows for the requested p / vitality");
  return sum / static_cast<double>(n);
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t block_channels(const space::SuperNetSpec& spec, std::size_t block) {
  if (block == 0) return spec.stem.out_channels;
  if (block <= spec.num_layers()) return spec.layers[block - 1].out_channels;
  return spec.num_classes;
}

}  // namespace

ProbeReport probe_importance(model::Network& net, const data::Dataset& ds, const ProbeOptions& opt) {
  if (ds.size() == 0) throw DataError("probe: empty evaluation set");
  if (opt.mask_seeds == 0) throw ConfigError("probe: mask_seeds must be positive");
  for (double p : opt.p_levels)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probe: p level " + std::to_string(p) + " outside [0, 1]");

  const auto& spec = net.spec();
  const auto vital = vital_by_rule(spec);
  const auto names = model::block_names(spec);
  ProbeReport report;
  report.baseline_accuracy = accuracy(net, ds, nullptr, opt.batch_size);
  for (std::size_t b = 0; b < net.num_blocks(); ++b)
    for (std::size_t pi = 0; pi < opt.p_levels.size(); ++pi) {
      double acc = 0;
      for (std::size_t s = 0; s < opt.mask_seeds; ++s) {
        Rng rng(splitmix(splitmix(splitmix(opt.seed) ^ b) ^ (pi << 20 | s)));
        model::BlockMask mask{b, draw_channel_mask(block_channels(spec, b), opt.p_levels[pi], rng)};
        acc += accuracy(net, ds, &mask, opt.batch_size);
      }
      report.rows.push_back({names[b], b, vital.is_vital_block(b), opt.p_levels[pi],
                             acc / static_cast<double>(opt.mask_seeds), report.baseline_accuracy});
    }
  return report;
}

void write_probe_csv(const std::filesystem::path& path, const ProbeReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("probe: cannot write " + path.string());
  char buf[128];
  out << "block_name,p,accuracy,baseline_accuracy\n";
  std::snprintf(buf, sizeof buf, "baseline,0,%.6f,%.6f\n", report.baseline_accuracy, report.baseline_accuracy);
  out << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, ",%g,%.6f,%.6f\n", r.p, r.accuracy, r.baseline_accuracy);
    out << r.block_name << buf;
  }
}

nlohmann::json probe_plot_json(const ProbeReport& report) {
  using jsonutil::fixed;
  nlohmann::json j;
  j["baseline"] = fixed(report.baseline_accuracy);
  std::vector<double> levels;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& r : report.rows) {
    if (blocks.empty() || blocks.back()["block"] != r.block) {
      blocks.push_back({{"name", r.block_name}, {"block", r.block}, {"vital", r.vital}, {"accuracy", nlohmann::json::array()}});
    }
    blocks.back()["accuracy"].push_back(fixed(r.accuracy));
    if (blocks.size() == 1) levels.push_back(r.p);
  }
  j["p_levels"] = levels;
  j["blocks"] = blocks;
  return j;
}

}  // namespace hournas::vitality
