#pragma once

// Raw forward/backward kernels over Tensor. The recorded ops in ops.hpp wrap
// these; nothing here knows about the tape.

#include <optional>

#include "lsnet/tensor.hpp"

namespace lsnet {

struct ConvGeom {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Output extent of a convolution along one axis.
inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Validates input/kernel compatibility; returns the output shape.
Shape conv2d_out_shape(const Shape& input, const Shape& kernel, const ConvGeom& geom);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                         const ConvGeom& geom);

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& kernel,
                                const Shape& input_shape, const ConvGeom& geom);

template <typename T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& dy, const Tensor<T>& x,
                                 const Shape& kernel_shape, const ConvGeom& geom);

/// Per-channel sum over (N, H, W); shape (1, C, 1, 1).
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& t);

/// Shape checks shared by both SKA kernels. Weight map is (N, G*ks*ks, H, W).
void ska_check(const Shape& x, const Shape& w, int kernel, int groups);

/// Direct transcription of the aggregation sum, one output element at a time.
template <typename T>
Tensor<T> ska_forward_naive(const Tensor<T>& x, const Tensor<T>& w, int kernel, int groups);

/// Plane-wise aggregation: per (n, channel, tap), a shifted multiply-add over the
/// valid rectangle. Inner loops are branch-free and contiguous in W.
template <typename T>
Tensor<T> ska_forward_fast(const Tensor<T>& x, const Tensor<T>& w, int kernel, int groups);

template <typename T>
Tensor<T> ska_backward_input(const Tensor<T>& dy, const Tensor<T>& w, int kernel, int groups);

template <typename T>
Tensor<T> ska_backward_weight(const Tensor<T>& dy, const Tensor<T>& x, int kernel, int groups);

/// Softmax over the W axis with max subtraction.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

/// Mean over H*W; shape (N, C, 1, 1).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Batched matmul over the trailing two axes: a (N,B,M,K) times b (N,B,K,P),
/// with either operand optionally transposed.
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b);

}  // namespace lsnet
