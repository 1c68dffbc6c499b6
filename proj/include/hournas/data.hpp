#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hournas/ops.hpp"
#include "hournas/rng.hpp"
#include "hournas/tensor.hpp"

namespace hournas::data {

/// Labelled images, N x C x H x W.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  /// Throws DataError unless labels lie in [0, class_count) and N > 0.
  void validate() const;

  /// Gathers the listed samples into a new image tensor.
  Tensor gather_images(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Disjoint train / validation index lists over one dataset.
struct Split {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

// ---------------------------------------------------------------------------
// IDX files (big-endian header, unsigned-byte payload)

/// Raw IDX array: dimensions and payload bytes, exactly as stored.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX file; `expected_magic` is checked. Throws DataError on bad
/// magic or when the payload is shorter or longer than the header implies.
IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Builds a dataset from an images array [N,H,W] and a labels array [N].
/// Pixels are scaled to [0,1] and then normalized per channel.
Dataset dataset_from_idx(const IdxArray& images, const IdxArray& labels);

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Linear quantization of a single-channel dataset back to unsigned bytes
/// (min -> 0, max -> 255); used to export synthetic data as IDX.
std::pair<IdxArray, IdxArray> to_idx(const Dataset& ds);

// ---------------------------------------------------------------------------
// Normalization and splitting

ops::ChannelStats channel_stats(const Dataset& ds, std::span<const std::size_t> indices);
/// x <- (x - mean_c) / sqrt(var_c); channels with zero variance are only centered.
void normalize(Dataset& ds, const ops::ChannelStats& stats);

/// Stratified 80/20 split: |train| = round(0.8 N) and each class keeps its
/// train share within one sample of 80 %. Deterministic for a seed.
/// Throws DataError when N < 5.
Split split_80_20(const Dataset& ds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t channels = 1;
  std::size_t height = 12;
  std::size_t width = 12;
  double noise = 0.5;
  std::size_t blobs = 3;
  std::uint64_t seed = 0;
};

/// Gaussian-blob prototypes plus pixel noise, generated from Rng(seed):
///  1. For each class c, each channel, each of `blobs` blobs (in that order)
///     draw cy = uniform()*H, cx = uniform()*W, sigma = (0.1 + 0.2*uniform())*H,
///     amplitude = normal(). The prototype is the sum of
///     amplitude * exp(-((y-cy)^2 + (x-cx)^2) / (2 sigma^2)).
///  2. For i in [0, per_class), for c in [0, classes): the sample is the
///     class-c prototype plus noise * normal() per pixel (channel, row,
///     column order); label c.
///  3. Every channel is normalized to zero mean, unit variance over the set.
/// Throws ConfigError when classes < 2.
Dataset synth_dataset(const SynthOptions& opt);

/// Class prototypes of step 1 (before normalization), [classes,C,H,W].
Tensor synth_prototypes(const SynthOptions& opt);

}  // namespace hournas::data
