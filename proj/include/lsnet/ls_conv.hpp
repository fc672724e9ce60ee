#pragma once

// LS convolution: large-kernel perception (LKP) generates a per-pixel weight
// map, small-kernel aggregation (SKA) applies it as a grouped dynamic
// convolution.

#include <cstdint>
#include <string>

#include "lsnet/layers.hpp"

namespace lsnet {

struct LsConvConfig {
  int channels = 0;
  int large_kernel = 7;
  int small_kernel = 3;
  int groups = 1;
  /// false removes the large-kernel depthwise layer from LKP ("w/o LKP").
  bool large_dw = true;

  /// D = G * K_S^2, the number of weight-map channels.
  int weight_dim() const { return groups * small_kernel * small_kernel; }
  int hidden() const { return channels / 2; }
  int group_width() const { return channels / groups; }

  /// Throws ConfigError unless C is even and positive, G | C, kernels odd and K_L >= K_S.
  void validate() const;

  /// K_L = 7, K_S = 3, G = C / group_width.
  static LsConvConfig defaults(int channels, int group_width = 8);
};

/// Per-pixel weight map index d maps to (group, row, col) = (d / K^2, (d % K^2) / K, d % K).
struct WeightIndex {
  int group;
  int row;
  int col;
};
WeightIndex weight_index(int d, int small_kernel);

template <typename T>
struct LkpParams {
  ConvParams<T> pw_reduce;  // C -> C/2, 1x1
  BnParams<T> bn_reduce;
  ConvParams<T> dw_large;   // depthwise C/2, K_L x K_L
  BnParams<T> bn_large;
  ConvParams<T> pw_mid;     // C/2 -> C/2, 1x1
  BnParams<T> bn_mid;
  ConvParams<T> pw_expand;  // C/2 -> D, 1x1, with bias, no norm

  /// Seeded random parameters with identity norms.
  static LkpParams random(const LsConvConfig& cfg, std::uint64_t seed);
  void to_store(ParamStore<T>& store, const std::string& prefix) const;
  static LkpParams from_store(const ParamStore<T>& store, const std::string& prefix,
                              const LsConvConfig& cfg);
};

/// Declares LKP parameters under <prefix>.{pw_reduce,dw_large,pw_mid,pw_expand}.
void declare_lkp(ParamLayout& layout, const std::string& prefix, const LsConvConfig& cfg);

/// Number of learnable kernel weights of LKP, excluding norm and bias terms.
std::uint64_t lkp_kernel_weight_count(const LsConvConfig& cfg);

/// Graph-level LKP: PW -> BN-ReLU -> DW(K_L) -> BN-ReLU -> PW -> BN-ReLU -> PW(+bias).
template <typename T>
Var<T> lkp(Graph<T>& graph, Var<T> x, const std::string& prefix, const LsConvConfig& cfg);

/// Graph-level LS convolution: ska(x, lkp(x)).
template <typename T>
Var<T> ls_conv(Graph<T>& graph, Var<T> x, const std::string& prefix, const LsConvConfig& cfg);

template <typename T>
Tensor<T> lkp_forward(const Tensor<T>& x, const LkpParams<T>& p, const LsConvConfig& cfg,
                      Mode mode = Mode::infer);

template <typename T>
Tensor<T> ska_forward(const Tensor<T>& x, const Tensor<T>& weights, const LsConvConfig& cfg);

template <typename T>
Tensor<T> ska_forward_naive(const Tensor<T>& x, const Tensor<T>& weights, const LsConvConfig& cfg);

template <typename T>
Tensor<T> ls_conv_forward(const Tensor<T>& x, const LkpParams<T>& p, const LsConvConfig& cfg,
                          Mode mode = Mode::infer);

/// Exact MAC tally of one LS convolution at H x W.
struct LsConvMacs {
  std::uint64_t pointwise = 0;  // 3HWC^2/4 + HWCD/2
  std::uint64_t depthwise = 0;  // HWC K_L^2 / 2 (0 without the large DW)
  std::uint64_t aggregation = 0;  // HWC K_S^2
  std::uint64_t closed_form = 0;  // (HWC/4)(3C + 2K_L^2 + (2G+4)K_S^2)

  std::uint64_t itemized() const;
};

/// Throws ArithmeticError on overflow and ConfigError on non-positive extents.
LsConvMacs ls_conv_macs(const LsConvConfig& cfg, std::int64_t height, std::int64_t width);

}  // namespace lsnet
