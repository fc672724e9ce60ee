#pragma once

// Datasets: u8 images with integer labels, normalized lazily at batch assembly.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "lsnet/tensor.hpp"

namespace lsnet {

struct Dataset {
  Shape shape;                       // (N, C, H, W)
  std::vector<std::uint8_t> pixels;  // N*C*H*W, NCHW order
  std::vector<int> labels;
  int classes = 0;
  std::vector<float> mean;  // per channel, in x/255 units
  std::vector<float> std;

  std::size_t size() const { return labels.size(); }
  /// Throws DataError on label/metadata violations, FormatError on size mismatch.
  void validate() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class DataFormat { idx, raw_dir };

/// IDX layout: a directory with images.idx (u8, rank 4), labels.idx (u8, rank 1)
/// and meta.txt ("classes = K", "mean = m0,m1,m2", "std = s0,s1,s2").
/// raw-dir layout: <root>/<label>/<file>.pgm|.ppm, files visited in name order;
/// grayscale images are replicated to three channels.
Dataset load_dataset(const std::filesystem::path& path, DataFormat format);

/// Writes the IDX layout.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Ten Gaussian blobs on a ring, one position per class, 32x32 RGB with noise.
/// Train split: 2000 samples; test split: 500. Both carry the train-split statistics.
Dataset make_blobs10(bool train, std::uint64_t seed = 0);

/// Resolves "blobs10", "blobs10-test", an IDX directory or a raw directory.
Dataset open_dataset(std::string_view source, std::uint64_t seed = 0);

template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

/// Gathers the listed samples, normalizes per channel and optionally mirrors
/// each sample horizontally with probability 1/2 (rng required then).
template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, bool hflip = false,
                    std::mt19937_64* rng = nullptr);

/// Reads a binary PGM (P5) or PPM (P6) with maxval 255 as (1, C, H, W) u8.
struct RawImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // CHW
};
RawImage read_pnm(const std::filesystem::path& path);

}  // namespace lsnet
