#pragma once

// Differentiable ops recorded on a Tape. Each returns the output Var and, when
// the tape records, registers its vector-Jacobian product.

#include <optional>
#include <span>

#include "lsnet/kernels.hpp"
#include "lsnet/tape.hpp"

namespace lsnet {

enum class Mode { train, infer };

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

/// Mutable running statistics owned by a ParamStore; null pointers skip updates.
template <typename T>
struct RunningStats {
  Tensor<T>* mean = nullptr;
  Tensor<T>* var = nullptr;
};

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias, ConvGeom geom);

/// Per-channel batch norm. Train mode normalizes with batch statistics and
/// updates `stats` (momentum 0.1, unbiased variance); infer mode reads them.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> scale, Var<T> shift, RunningStats<T> stats, Mode mode);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> sigmoid(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

/// x (N,C,H,W) times a per-(n,c) gate of shape (N,C,1,1).
template <typename T>
Var<T> channel_gate(Var<T> x, Var<T> gate);

template <typename T>
Var<T> global_avg_pool(Var<T> x);

/// Grouped dynamic aggregation of x with the per-pixel weight map w.
template <typename T>
Var<T> ska(Var<T> x, Var<T> w, int kernel, int groups);

template <typename T>
Var<T> softmax_lastdim(Var<T> x);

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b, bool trans_a, bool trans_b);

/// (N, heads*d, H, W) -> (N, heads, H*W, d).
template <typename T>
Var<T> split_heads(Var<T> x, int heads);

/// (N, heads, H*W, d) -> (N, heads*d, H, W).
template <typename T>
Var<T> merge_heads(Var<T> x, int height, int width);

/// Mean cross-entropy of logits (N,K,1,1) against integer labels with label
/// smoothing; result shape (1,1,1,1).
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, T smoothing);

}  // namespace lsnet
