#include "hournas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace hournas {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'H', 'N', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string where) : b_(std::move(bytes)), where_(std::move(where)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof v), sizeof v);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  bool done() const { return pos_ == b_.size(); }

 private:
  const char* take(std::size_t n) {
    if (b_.size() - pos_ < n)
      throw DataError(where_ + ": truncated at byte " + std::to_string(pos_) + " (needs " + std::to_string(n) +
                      " more, file has " + std::to_string(b_.size()) + ")");
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::vector<char> b_;
  std::size_t pos_ = 0;
  std::string where_;
};

}  // namespace

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
  }
  for (const auto& [name, t] : tensors)
    for (Real v : t.data()) put<double>(out, static_cast<double>(v));
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()),
           "checkpoint " + path.string());
  if (r.str(4) != std::string(kMagic, 4)) throw DataError("checkpoint " + path.string() + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.get<std::uint32_t>());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    out.emplace_back(std::move(name), Tensor(shape));
  }
  for (auto& [name, t] : out)
    for (auto& v : t.data()) v = static_cast<Real>(r.get<double>());
  if (!r.done()) throw DataError("checkpoint " + path.string() + ": trailing bytes");
  return out;
}

NamedTensors network_state(model::Network& net) {
  NamedTensors out = net.named_parameters();
  for (auto& [name, st] : net.named_stats()) {
    if (st->empty()) continue;
    out.emplace_back(name + ".running_mean", Tensor(Shape{st->mean.size()}, st->mean));
    out.emplace_back(name + ".running_var", Tensor(Shape{st->var.size()}, st->var));
  }
  return out;
}

void load_network_state(model::Network& net, const NamedTensors& state) {
  std::map<std::string, Tensor> by_name(state.begin(), state.end());
  for (auto& [name, t] : net.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw DataError("checkpoint: tensor " + name + " has shape " + to_string(it->second.shape()) + ", expected " +
                      to_string(t.shape()));
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), t.data().begin());
  }
  for (auto& [name, st] : net.named_stats()) {
    auto m = by_name.find(name + ".running_mean");
    auto v = by_name.find(name + ".running_var");
    if (m == by_name.end() || v == by_name.end()) {
      *st = {};
      continue;
    }
    st->mean.assign(m->second.data().begin(), m->second.data().end());
    st->var.assign(v->second.data().begin(), v->second.data().end());
  }
}

void save_network(const std::filesystem::path& path, model::Network& net, const NamedTensors& extra) {
  NamedTensors all = network_state(net);
  all.insert(all.end(), extra.begin(), extra.end());
  save_tensors(path, all);
}

void load_network(const std::filesystem::path& path, model::Network& net) {
  load_network_state(net, load_tensors(path));
}

}  // namespace hournas
