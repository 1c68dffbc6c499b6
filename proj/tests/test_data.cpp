#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "hournas/data.hpp"
#include "hournas/ops.hpp"
#include "hournas/optim.hpp"
#include "support/gradcheck.hpp"

using namespace hournas;
using namespace hournas::data;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("hournas_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A 28x28, 10-class image/label pair with random pixels.
std::pair<IdxArray, IdxArray> canonical_pair(std::size_t n, Rng& rng) {
  IdxArray img{kIdxImagesMagic, {static_cast<std::uint32_t>(n), 28, 28}, {}};
  IdxArray lab{kIdxLabelsMagic, {static_cast<std::uint32_t>(n)}, {}};
  for (std::size_t i = 0; i < n * 28 * 28; ++i) img.bytes.push_back(static_cast<std::uint8_t>(rng.index(256)));
  for (std::size_t i = 0; i < n; ++i) lab.bytes.push_back(static_cast<std::uint8_t>(i % 10));
  return {img, lab};
}

Dataset labelled(std::vector<int> labels) {
  Dataset ds;
  ds.images = Tensor({labels.size(), 1, 2, 2});
  ds.class_count = 1 + static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()));
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace

TEST_SUITE("data") {
TEST_CASE("idx header contract and round trip") {
  Rng rng(1);
  const auto dir = scratch_dir("idx");
  const auto [img, lab] = canonical_pair(37, rng);
  write_idx(dir / "images.idx", img);
  write_idx(dir / "labels.idx", lab);
  CHECK(std::filesystem::file_size(dir / "images.idx") == 16 + 37 * 28 * 28);

  const auto ds = load_idx(dir / "images.idx", dir / "labels.idx");
  CHECK(ds.size() == 37);
  CHECK(ds.class_count == 10);
  CHECK(ds.images.shape() == Shape{37, 1, 28, 28});

  const auto back = read_idx(dir / "images.idx", kIdxImagesMagic);
  CHECK(back.dims == img.dims);
  write_idx(dir / "images2.idx", back);
  write_idx(dir / "labels2.idx", read_idx(dir / "labels.idx", kIdxLabelsMagic));
  CHECK(file_bytes(dir / "images2.idx") == file_bytes(dir / "images.idx"));
  CHECK(file_bytes(dir / "labels2.idx") == file_bytes(dir / "labels.idx"));
}

TEST_CASE("idx errors") {
  Rng rng(2);
  const auto dir = scratch_dir("idx_errors");
  const auto [img, lab] = canonical_pair(4, rng);
  write_idx(dir / "images.idx", img);
  write_idx(dir / "labels.idx", lab);

  auto bytes = file_bytes(dir / "images.idx");
  bytes.resize(bytes.size() - 5);
  {
    std::ofstream out(dir / "short.idx", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  const auto full = 16 + 4 * 28 * 28;
  try {
    read_idx(dir / "short.idx", kIdxImagesMagic);
    FAIL("truncated file accepted");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected " + std::to_string(full)) != std::string::npos);
    CHECK(msg.find("got " + std::to_string(full - 5)) != std::string::npos);
  }

  CHECK_THROWS_AS(read_idx(dir / "labels.idx", kIdxImagesMagic), DataError);
  CHECK_THROWS_AS(load_idx(dir / "labels.idx", dir / "images.idx"), DataError);

  IdxArray fewer = lab;
  fewer.dims = {3};
  fewer.bytes.resize(3);
  write_idx(dir / "fewer.idx", fewer);
  CHECK_THROWS_AS(load_idx(dir / "images.idx", dir / "fewer.idx"), DataError);
  CHECK_THROWS_AS(load_idx(dir / "missing.idx", dir / "labels.idx"), DataError);
}

TEST_CASE("normalization on the train split") {
  Rng rng(3);
  const auto [img, lab] = canonical_pair(200, rng);
  auto ds = dataset_from_idx(img, lab);
  const auto split = split_80_20(ds, 3);
  normalize(ds, channel_stats(ds, split.train_indices));
  const auto s = channel_stats(ds, split.train_indices);
  CHECK(std::abs(s.mean[0]) < 1e-6);
  CHECK(std::abs(s.var[0] - 1) < 1e-3);

  SynthOptions o;
  o.channels = 3;
  const auto synth = synth_dataset(o);
  std::vector<std::size_t> all(synth.size());
  std::iota(all.begin(), all.end(), 0);
  const auto t = channel_stats(synth, all);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(t.mean[c]) < 1e-6);
    CHECK(std::abs(t.var[c] - 1) < 1e-3);
  }
}

TEST_CASE("split sizes, strata and determinism") {
  const auto ten = labelled({0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
  const auto s = split_80_20(ten, 7);
  CHECK(s.train_indices.size() == 8);
  CHECK(s.val_indices.size() == 2);
  std::set<int> val_classes;
  for (auto i : s.val_indices) val_classes.insert(ten.labels[i]);
  CHECK(val_classes == std::set<int>{0, 1});

  const auto again = split_80_20(ten, 7);
  CHECK(again.train_indices == s.train_indices);
  CHECK(again.val_indices == s.val_indices);

  CHECK_THROWS_AS(split_80_20(labelled({0, 1, 0, 1}), 0), DataError);

  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> labels(5 + rng.index(200));
    const int classes = 2 + static_cast<int>(rng.index(6));
    for (auto& y : labels) y = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
    labels[0] = classes - 1;
    const auto ds = labelled(labels);
    const auto sp = split_80_20(ds, trial);
    const std::size_t n = labels.size();
    CHECK(sp.train_indices.size() == static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n))));

    std::vector<std::size_t> all(sp.train_indices);
    all.insert(all.end(), sp.val_indices.begin(), sp.val_indices.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(all[i] == i);

    std::map<int, double> total, train;
    for (auto y : labels) total[y] += 1;
    for (auto i : sp.train_indices) train[labels[i]] += 1;
    for (const auto& [y, cnt] : total) CHECK(std::abs(train[y] - 0.8 * cnt) <= 1.0);
  }
}

TEST_CASE("synthetic data: prototypes separate at zero noise") {
  SynthOptions o;
  o.noise = 0;
  o.classes = 5;
  o.per_class = 20;
  o.seed = 11;
  const auto ds = synth_dataset(o);

  // Each sample is its class prototype, normalized with the set statistics,
  // which for a balanced set equal the statistics of the prototypes alone.
  Dataset protos;
  protos.images = synth_prototypes(o);
  protos.class_count = o.classes;
  for (std::size_t c = 0; c < o.classes; ++c) protos.labels.push_back(static_cast<int>(c));
  std::vector<std::size_t> idx(o.classes);
  std::iota(idx.begin(), idx.end(), 0);
  normalize(protos, channel_stats(protos, idx));

  const std::size_t per = o.height * o.width;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double best = INFINITY;
    int arg = -1;
    for (std::size_t c = 0; c < o.classes; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < per; ++k) {
        const double e = ds.images.data()[i * per + k] - protos.images.data()[c * per + k];
        d += e * e;
      }
      if (d < best) best = d, arg = static_cast<int>(c);
    }
    correct += arg == ds.labels[i];
  }
  CHECK(correct == ds.size());

  CHECK_THROWS_AS(synth_dataset([] {
                    SynthOptions bad;
                    bad.classes = 1;
                    return bad;
                  }()),
                  ConfigError);
}

TEST_CASE("synthetic data is bit-identical for a seed") {
  SynthOptions o;
  o.seed = 21;
  o.channels = 2;
  const auto a = synth_dataset(o), b = synth_dataset(o);
  CHECK(a.labels == b.labels);
  CHECK(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
  o.seed = 22;
  const auto c = synth_dataset(o);
  CHECK(!std::equal(a.images.data().begin(), a.images.data().end(), c.images.data().begin()));
}

TEST_CASE("a two-layer perceptron learns low-noise blobs") {
  SynthOptions o;
  o.noise = 0.1;
  o.per_class = 250;
  o.seed = 5;
  const auto ds = synth_dataset(o);
  const auto split = split_80_20(ds, 5);
  const std::size_t in = ds.channels() * ds.height() * ds.width(), hidden = 32;

  Rng rng(5);
  auto w1 = hournas::testing::randn({hidden, in}, rng, std::sqrt(2.0 / in));
  auto w2 = hournas::testing::randn({ds.class_count, hidden}, rng, std::sqrt(1.0 / hidden));
  Tensor b1({hidden}, true), b2({ds.class_count}, true);
  for (auto* t : {&w1, &w2}) t->set_requires_grad(true);
  std::vector<Tensor> params{w1, b1, w2, b2};

  auto forward = [&](Graph& g, const Tensor& x) {
    auto h = ops::relu(g, ops::linear(g, ops::flatten(g, x), w1, b1));
    return ops::linear(g, h, w2, b2);
  };

  auto order = split.train_indices;
  for (int epoch = 0; epoch < 3; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t s = 0; s < order.size(); s += 32) {
      const std::span<const std::size_t> idx(order.data() + s, std::min<std::size_t>(32, order.size() - s));
      Graph g;
      const auto labels = ds.gather_labels(idx);
      auto loss = ops::cross_entropy(g, forward(g, ds.gather_images(idx)), labels);
      g.backward(loss);
      optim::sgd_step(params, 0.1);
    }
  }
  auto g = Graph::inference();
  const auto pred = ops::argmax_rows(forward(g, ds.gather_images(split.val_indices)));
  const auto truth = ds.gather_labels(split.val_indices);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += pred[i] == truth[i];
  CHECK(static_cast<double>(correct) / static_cast<double>(truth.size()) > 0.95);
}
}  // TEST_SUITE
