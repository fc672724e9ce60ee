#pragma once

// Qualitative analyses written as heat maps: effective receptive fields from
// input gradients and the accumulated LS-conv aggregation weights.

#include <filesystem>
#include <string>
#include <vector>

#include "lsnet/model.hpp"

namespace lsnet {

/// Single-channel f32 plane plus its min/max normalization record.
struct HeatMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major, unnormalized
  float min = 0;
  float max = 0;

  static HeatMap from_values(int height, int width, std::vector<float> values);
  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
  double sum() const;
  /// Pixels strictly above fraction * max (0 when the map is all zero).
  std::size_t support(double fraction = 0.01) const;

  /// Binary P5, maxval 255, after min-max normalization (a flat map writes 0).
  /// Header lines become PGM comments.
  void write_pgm(const std::filesystem::path& path, const std::vector<std::string>& header = {}) const;
  /// "row,col,value" rows, full float precision, header lines prefixed by '#'.
  void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header = {}) const;
};

/// |d(sum over channels of output(0, :, row, col)) / d input| averaged over
/// input channels. `input` must be the differentiable leaf named "input".
template <typename T>
HeatMap input_gradient_map(Tape<T>& tape, Var<T> input, Var<T> output, int row, int col);

/// ERF of stage `stage` (0-based) at feature position (row, col); negative
/// coordinates select the centre. Image shape (1, 3, H, W).
template <typename T>
HeatMap erf_map(const ParamStore<T>& store, const ModelSpec& spec, const Tensor<T>& image,
                int stage, int row = -1, int col = -1);

/// Prefixes of the LS convolutions of one stage, in block order.
std::vector<std::string> ls_conv_prefixes(const ModelSpec& spec, int stage);

struct AggregationMap {
  std::string layer;   // LS-conv prefix
  HeatMap feature;     // per token, at the feature resolution
  HeatMap upsampled;   // nearest upsampled to the input size, mass preserving
  double mass = 0;     // sum of in-bounds |w| over taps, pixels, divided by groups
};

/// Accumulates, for each token, |w| of every in-bounds aggregation tap that reads
/// it, averaged over groups. `layer` indexes ls_conv_prefixes(spec, stage).
/// `force_delta` replaces the weight map by a centre-tap delta.
template <typename T>
AggregationMap aggregation_weights(const ParamStore<T>& store, const ModelSpec& spec,
                                   const Tensor<T>& image, int stage, int layer,
                                   bool force_delta = false);

/// Token accumulation for one weight map (1, G*K*K, h, w).
template <typename T>
HeatMap accumulate_aggregation(const Tensor<T>& weights, int kernel, int groups);

/// Weight map with 1 at the centre tap of every group and 0 elsewhere.
template <typename T>
Tensor<T> delta_weight_map(const Shape& shape, int kernel);

}  // namespace lsnet
