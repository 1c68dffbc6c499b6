#include "hournas/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

namespace hournas::data {

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset: no samples");
  if (!images.defined() || images.rank() != 4 || images.dim(0) != labels.size())
    throw DataError("dataset: images and labels disagree on the sample count");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw DataError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
}

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
  const std::size_t per = channels() * height() * width();
  Tensor out(Shape{indices.size(), channels(), height(), width()});
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("dataset: sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  return Dataset{gather_images(indices), gather_labels(indices), class_count};
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("idx: cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "idx " + path.string() + ": ";
  if (raw.size() < 4) throw DataError(where + "file shorter than the 4-byte magic");

  IdxArray arr;
  arr.magic = read_be32(raw.data());
  if (arr.magic != expected_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x (expected 0x%08x)", arr.magic, expected_magic);
    throw DataError(where + buf);
  }
  const std::size_t ndim = arr.magic & 0xff;
  const std::size_t header = 4 + 4 * ndim;
  if (raw.size() < header)
    throw DataError(where + "truncated header: expected " + std::to_string(header) + " bytes, got " +
                    std::to_string(raw.size()));
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    arr.dims.push_back(read_be32(raw.data() + 4 + 4 * d));
    count *= arr.dims.back();
  }
  const std::size_t expected = header + count;
  if (raw.size() != expected)
    throw DataError(where + (raw.size() < expected ? "truncated" : "trailing bytes") + ": expected " +
                    std::to_string(expected) + " bytes, got " + std::to_string(raw.size()));
  arr.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header), raw.end());
  return arr;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  if ((array.magic & 0xff) != array.dims.size()) throw DataError("idx: magic does not match the dimension count");
  std::vector<std::uint8_t> out;
  put_be32(out, array.magic);
  for (auto d : array.dims) put_be32(out, d);
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("idx: cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("idx: write failed for " + path.string());
}

Dataset dataset_from_idx(const IdxArray& images, const IdxArray& labels) {
  if (images.dims.size() != 3) throw DataError("idx: images must be [N,H,W]");
  if (labels.dims.size() != 1) throw DataError("idx: labels must be [N]");
  const std::size_t n = images.dims[0], h = images.dims[1], w = images.dims[2];
  if (labels.dims[0] != n)
    throw DataError("idx: " + std::to_string(n) + " images but " + std::to_string(labels.dims[0]) + " labels");
  Dataset ds;
  ds.images = Tensor(Shape{n, 1, h, w});
  auto px = ds.images.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<Real>(images.bytes[i] / 255.0);
  int max_label = 0;
  for (auto b : labels.bytes) {
    ds.labels.push_back(b);
    max_label = std::max(max_label, int{b});
  }
  ds.class_count = static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  normalize(ds, channel_stats(ds, all));
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  return dataset_from_idx(read_idx(images_path, kIdxImagesMagic), read_idx(labels_path, kIdxLabelsMagic));
}

std::pair<IdxArray, IdxArray> to_idx(const Dataset& ds) {
  ds.validate();
  if (ds.channels() != 1) throw DataError("idx: only single-channel datasets can be exported");
  if (ds.class_count > 256) throw DataError("idx: more than 256 classes");
  auto px = ds.images.data();
  const auto [lo, hi] = std::minmax_element(px.begin(), px.end());
  const double range = *hi - *lo;
  IdxArray img{kIdxImagesMagic,
               {static_cast<std::uint32_t>(ds.size()), static_cast<std::uint32_t>(ds.height()),
                static_cast<std::uint32_t>(ds.width())},
               {}};
  img.bytes.reserve(px.size());
  for (Real v : px)
    img.bytes.push_back(static_cast<std::uint8_t>(range > 0 ? std::lround((v - *lo) / range * 255.0) : 0));
  IdxArray lab{kIdxLabelsMagic, {static_cast<std::uint32_t>(ds.size())}, {}};
  for (int y : ds.labels) lab.bytes.push_back(static_cast<std::uint8_t>(y));
  return {std::move(img), std::move(lab)};
}

// ---------------------------------------------------------------------------

ops::ChannelStats channel_stats(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("channel_stats: no samples");
  const std::size_t c = ds.channels(), hw = ds.height() * ds.width();
  ops::ChannelStats st{std::vector<Real>(c), std::vector<Real>(c)};
  auto px = ds.images.data();
  const double count = static_cast<double>(indices.size() * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (auto i : indices) {
      const Real* p = px.data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) sum += p[k];
    }
    const double mean = sum / count;
    for (auto i : indices) {
      const Real* p = px.data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    st.mean[ch] = static_cast<Real>(mean);
    st.var[ch] = static_cast<Real>(sq / count);
  }
  return st;
}

void normalize(Dataset& ds, const ops::ChannelStats& stats) {
  const std::size_t c = ds.channels(), hw = ds.height() * ds.width();
  if (stats.mean.size() != c) throw ShapeError("normalize: statistics for the wrong channel count");
  auto px = ds.images.data();
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double sd = stats.var[ch] > 0 ? std::sqrt(static_cast<double>(stats.var[ch])) : 1.0;
      Real* p = px.data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) p[k] = static_cast<Real>((p[k] - stats.mean[ch]) / sd);
    }
}

Split split_80_20(const Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n < 5) throw DataError("split: need at least 5 samples, got " + std::to_string(n));
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < n; ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);

  // Floor per class, then hand the remainder to the largest fractional parts.
  const auto total = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  std::vector<std::size_t> take(ds.class_count);
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    const double want = 0.8 * static_cast<double>(by_class[c].size());
    take[c] = static_cast<std::size_t>(std::floor(want));
    assigned += take[c];
    frac.emplace_back(-(want - std::floor(want)), c);
  }
  std::stable_sort(frac.begin(), frac.end());
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++take[frac[k % frac.size()].second];

  Rng rng(seed);
  Split s;
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    auto& idx = by_class[c];
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    s.train_indices.insert(s.train_indices.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
    s.val_indices.insert(s.val_indices.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]), idx.end());
  }
  std::sort(s.train_indices.begin(), s.train_indices.end());
  std::sort(s.val_indices.begin(), s.val_indices.end());
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Tensor draw_prototypes(const SynthOptions& opt, Rng& rng) {
  if (opt.classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (opt.channels == 0 || opt.height == 0 || opt.width == 0) throw ConfigError("synth: empty image shape");
  const std::size_t h = opt.height, w = opt.width;
  Tensor proto(Shape{opt.classes, opt.channels, h, w});
  auto p = proto.data();
  for (std::size_t c = 0; c < opt.classes; ++c)
    for (std::size_t ch = 0; ch < opt.channels; ++ch) {
      Real* img = p.data() + (c * opt.channels + ch) * h * w;
      for (std::size_t b = 0; b < opt.blobs; ++b) {
        const double cy = rng.uniform() * static_cast<double>(h);
        const double cx = rng.uniform() * static_cast<double>(w);
        const double sigma = (0.1 + 0.2 * rng.uniform()) * static_cast<double>(h);
        const double amp = rng.normal();
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            img[y * w + x] += static_cast<Real>(amp * std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)));
          }
      }
    }
  return proto;
}

}  // namespace

Tensor synth_prototypes(const SynthOptions& opt) {
  Rng rng(opt.seed);
  return draw_prototypes(opt, rng);
}

Dataset synth_dataset(const SynthOptions& opt) {
  if (opt.per_class == 0) throw ConfigError("synth: per_class must be positive");
  Rng rng(opt.seed);
  Tensor proto = draw_prototypes(opt, rng);
  const std::size_t per = opt.channels * opt.height * opt.width;
  const std::size_t n = opt.per_class * opt.classes;
  Dataset ds;
  ds.class_count = opt.classes;
  ds.images = Tensor(Shape{n, opt.channels, opt.height, opt.width});
  auto px = ds.images.data();
  auto pp = proto.data();
  std::size_t s = 0;
  for (std::size_t i = 0; i < opt.per_class; ++i)
    for (std::size_t c = 0; c < opt.classes; ++c, ++s) {
      for (std::size_t k = 0; k < per; ++k)
        px[s * per + k] = static_cast<Real>(pp[c * per + k] + opt.noise * rng.normal());
      ds.labels.push_back(static_cast<int>(c));
    }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  normalize(ds, channel_stats(ds, all));
  return ds;
}

}  // namespace hournas::data
