#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hournas/network.hpp"
#include "hournas/tensor.hpp"

namespace hournas {

/// Binary tensor archive, little-endian throughout:
///
///   "HNCK"                      4 bytes
///   version                     u32 (currently 1)
///   tensor count                u32
///   per tensor: name length u32, name bytes, rank u32, dims u64[rank]
///   payload: every tensor's values as float64, in table order
///
/// Values are always stored as float64 regardless of the build's Real.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
/// Throws DataError on bad magic, unknown version or truncation.
NamedTensors load_tensors(const std::filesystem::path& path);

/// Parameters plus batchnorm statistics ("<conv>.running_mean/var").
NamedTensors network_state(model::Network& net);
/// Restores a state produced by network_state(). Every parameter of `net`
/// must be present with a matching shape; extra entries are ignored.
void load_network_state(model::Network& net, const NamedTensors& state);

void save_network(const std::filesystem::path& path, model::Network& net, const NamedTensors& extra = {});
void load_network(const std::filesystem::path& path, model::Network& net);

}  // namespace hournas
