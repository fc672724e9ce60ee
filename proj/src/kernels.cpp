#include "lsnet/kernels.hpp"

#include <algorithm>
#include <limits>

#include "lsnet/parallel.hpp"

namespace lsnet {
namespace {

// Range of output columns o in [0, out) with 0 <= o*stride - pad + k < in.
struct Span1 {
  int lo;
  int hi;
};

Span1 valid_outputs(int out, int in, int stride, int pad, int k) {
  const int shift = k - pad;
  // o*stride + shift >= 0  and  o*stride + shift <= in - 1
  int lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  int hi = in - 1 - shift < 0 ? 0 : (in - 1 - shift) / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

// 1x1 stride-1 unpadded convolutions are treated as a single row of H*W pixels.
bool is_pointwise(const Shape& kernel, const ConvGeom& g) {
  return kernel.h == 1 && kernel.w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

Shape conv2d_out_shape(const Shape& input, const Shape& kernel, const ConvGeom& geom) {
  if (geom.groups <= 0 || geom.stride <= 0 || geom.padding < 0) {
    throw ConfigError("conv2d: invalid stride/padding/groups");
  }
  if (input.c % geom.groups != 0 || kernel.n % geom.groups != 0) {
    throw ConfigError("conv2d: groups " + std::to_string(geom.groups) +
                      " does not divide channels in=" + std::to_string(input.c) +
                      " out=" + std::to_string(kernel.n));
  }
  if (kernel.c * geom.groups != input.c) {
    throw ConfigError("conv2d: input has " + std::to_string(input.c) + " channels, kernel " +
                      kernel.str() + " expects " + std::to_string(kernel.c * geom.groups));
  }
  const int oh = conv_out_extent(input.h, kernel.h, geom.stride, geom.padding);
  const int ow = conv_out_extent(input.w, kernel.w, geom.stride, geom.padding);
  if (oh <= 0 || ow <= 0) throw ConfigError("conv2d: kernel larger than padded input");
  return {input.n, kernel.n, oh, ow};
}

namespace {

// Direct loops over valid spans; used for depthwise convolutions, where every
// output plane reads a single input plane.
template <typename T>
Tensor<T> conv2d_forward_direct(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                                const ConvGeom& geom) {
  const Shape out_shape = conv2d_out_shape(x.shape(), kernel.shape(), geom);
  Tensor<T> y(out_shape);
  const bool pw = is_pointwise(kernel.shape(), geom);
  const int ih = pw ? 1 : x.shape().h, iw = pw ? static_cast<int>(x.shape().plane()) : x.shape().w;
  const int oh = pw ? 1 : out_shape.h, ow = pw ? static_cast<int>(out_shape.plane()) : out_shape.w;
  const int kh = kernel.shape().h, kw = kernel.shape().w;
  const int cin_g = kernel.shape().c, cout_g = out_shape.c / geom.groups;
  const int s = geom.stride, p = geom.padding;

  parallel_for(static_cast<std::size_t>(out_shape.n) * out_shape.c, [&](std::size_t job) {
    const int n = static_cast<int>(job / out_shape.c);
    const int oc = static_cast<int>(job % out_shape.c);
    const int g = oc / cout_g;
    T* out = y.plane(n, oc);
    if (bias != nullptr) std::fill(out, out + out_shape.plane(), (*bias)[oc]);
    for (int icg = 0; icg < cin_g; ++icg) {
      const T* in = x.plane(n, g * cin_g + icg);
      const T* k = kernel.plane(oc, icg);
      for (int a = 0; a < kh; ++a) {
        const Span1 rows = valid_outputs(oh, ih, s, p, a);
        for (int b = 0; b < kw; ++b) {
          const T wv = k[a * kw + b];
          const Span1 cols = valid_outputs(ow, iw, s, p, b);
          for (int r = rows.lo; r < rows.hi; ++r) {
            T* orow = out + static_cast<std::size_t>(r) * ow;
            const T* irow = in + static_cast<std::size_t>(r * s - p + a) * iw - p + b;
            if (s == 1) {
              for (int c = cols.lo; c < cols.hi; ++c) orow[c] += wv * irow[c];
            } else {
              for (int c = cols.lo; c < cols.hi; ++c) orow[c] += wv * irow[c * s];
            }
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> conv2d_backward_input_direct(const Tensor<T>& dy, const Tensor<T>& kernel,
                                const Shape& input_shape, const ConvGeom& geom) {
  const Shape out_shape = conv2d_out_shape(input_shape, kernel.shape(), geom);
  require_same_shape(out_shape, dy.shape(), "conv2d backward");
  Tensor<T> dx(input_shape);
  const bool pw = is_pointwise(kernel.shape(), geom);
  const int ih = pw ? 1 : input_shape.h, iw = pw ? static_cast<int>(input_shape.plane()) : input_shape.w;
  const int oh = pw ? 1 : out_shape.h, ow = pw ? static_cast<int>(out_shape.plane()) : out_shape.w;
  const int kh = kernel.shape().h, kw = kernel.shape().w;
  const int cin_g = kernel.shape().c, cout_g = out_shape.c / geom.groups;
  const int s = geom.stride, p = geom.padding;

  // One job per input channel plane; it gathers from every output channel of its group.
  parallel_for(static_cast<std::size_t>(input_shape.n) * input_shape.c, [&](std::size_t job) {
    const int n = static_cast<int>(job / input_shape.c);
    const int ic = static_cast<int>(job % input_shape.c);
    const int g = ic / cin_g, icg = ic % cin_g;
    T* din = dx.plane(n, ic);
    for (int ocg = 0; ocg < cout_g; ++ocg) {
      const int oc = g * cout_g + ocg;
      const T* dout = dy.plane(n, oc);
      const T* k = kernel.plane(oc, icg);
      for (int a = 0; a < kh; ++a) {
        const Span1 rows = valid_outputs(oh, ih, s, p, a);
        for (int b = 0; b < kw; ++b) {
          const T wv = k[a * kw + b];
          const Span1 cols = valid_outputs(ow, iw, s, p, b);
          for (int r = rows.lo; r < rows.hi; ++r) {
            const T* orow = dout + static_cast<std::size_t>(r) * ow;
            T* irow = din + static_cast<std::size_t>(r * s - p + a) * iw - p + b;
            if (s == 1) {
              for (int c = cols.lo; c < cols.hi; ++c) irow[c] += wv * orow[c];
            } else {
              for (int c = cols.lo; c < cols.hi; ++c) irow[c * s] += wv * orow[c];
            }
          }
        }
      }
    }
  });
  return dx;
}

template <typename T>
Tensor<T> conv2d_backward_kernel_direct(const Tensor<T>& dy, const Tensor<T>& x,
                                 const Shape& kernel_shape, const ConvGeom& geom) {
  const Shape out_shape = conv2d_out_shape(x.shape(), kernel_shape, geom);
  require_same_shape(out_shape, dy.shape(), "conv2d backward");
  Tensor<T> dk(kernel_shape);
  const bool pw = is_pointwise(kernel_shape, geom);
  const Shape& xs = x.shape();
  const int ih = pw ? 1 : xs.h, iw = pw ? static_cast<int>(xs.plane()) : xs.w;
  const int oh = pw ? 1 : out_shape.h, ow = pw ? static_cast<int>(out_shape.plane()) : out_shape.w;
  const int kh = kernel_shape.h, kw = kernel_shape.w;
  const int cin_g = kernel_shape.c, cout_g = out_shape.c / geom.groups;
  const int s = geom.stride, p = geom.padding;

  parallel_for(static_cast<std::size_t>(kernel_shape.n), [&](std::size_t job) {
    const int oc = static_cast<int>(job);
    const int g = oc / cout_g;
    for (int icg = 0; icg < cin_g; ++icg) {
      T* k = dk.plane(oc, icg);
      for (int n = 0; n < xs.n; ++n) {
        const T* in = x.plane(n, g * cin_g + icg);
        const T* dout = dy.plane(n, oc);
        for (int a = 0; a < kh; ++a) {
          const Span1 rows = valid_outputs(oh, ih, s, p, a);
          for (int b = 0; b < kw; ++b) {
            const Span1 cols = valid_outputs(ow, iw, s, p, b);
            T acc{0};
            for (int r = rows.lo; r < rows.hi; ++r) {
              const T* orow = dout + static_cast<std::size_t>(r) * ow;
              const T* irow = in + static_cast<std::size_t>(r * s - p + a) * iw - p + b;
              for (int c = cols.lo; c < cols.hi; ++c) acc += orow[c] * irow[c * s];
            }
            k[a * kw + b] += acc;
          }
        }
      }
    }
  });
  return dk;
}

constexpr int kColBlock = 256;

// Y[M x N] += A[M x K] * B[K x N], A with row stride lda.
template <typename T>
void gemm_nn(int m_rows, std::size_t n_cols, int k_depth, const T* a, int lda, const T* b, T* y) {
  const std::size_t blocks = (static_cast<std::size_t>(m_rows) + 3) / 4;
  parallel_for(blocks, [&](std::size_t blk) {
    const int m = static_cast<int>(blk) * 4;
    const int rows = std::min(4, m_rows - m);
    for (std::size_t j0 = 0; j0 < n_cols; j0 += kColBlock) {
      const std::size_t len = std::min<std::size_t>(kColBlock, n_cols - j0);
      if (rows == 4) {
        T* __restrict y0 = y + static_cast<std::size_t>(m) * n_cols + j0;
        T* __restrict y1 = y0 + n_cols;
        T* __restrict y2 = y1 + n_cols;
        T* __restrict y3 = y2 + n_cols;
        for (int k = 0; k < k_depth; ++k) {
          const T a0 = a[static_cast<std::size_t>(m) * lda + k];
          const T a1 = a[static_cast<std::size_t>(m + 1) * lda + k];
          const T a2 = a[static_cast<std::size_t>(m + 2) * lda + k];
          const T a3 = a[static_cast<std::size_t>(m + 3) * lda + k];
          const T* __restrict bk = b + static_cast<std::size_t>(k) * n_cols + j0;
          for (std::size_t j = 0; j < len; ++j) {
            const T bv = bk[j];
            y0[j] += a0 * bv;
            y1[j] += a1 * bv;
            y2[j] += a2 * bv;
            y3[j] += a3 * bv;
          }
        }
      } else {
        for (int r = 0; r < rows; ++r) {
          T* __restrict yr = y + static_cast<std::size_t>(m + r) * n_cols + j0;
          for (int k = 0; k < k_depth; ++k) {
            const T av = a[static_cast<std::size_t>(m + r) * lda + k];
            const T* __restrict bk = b + static_cast<std::size_t>(k) * n_cols + j0;
            for (std::size_t j = 0; j < len; ++j) yr[j] += av * bk[j];
          }
        }
      }
    }
  });
}

// D[K x N] += A^T * G, A is M x K (row stride lda), G is M x N.
template <typename T>
void gemm_tn(int m_rows, std::size_t n_cols, int k_depth, const T* a, int lda, const T* g, T* d) {
  const std::size_t blocks = (static_cast<std::size_t>(k_depth) + 3) / 4;
  parallel_for(blocks, [&](std::size_t blk) {
    const int k = static_cast<int>(blk) * 4;
    const int rows = std::min(4, k_depth - k);
    for (std::size_t j0 = 0; j0 < n_cols; j0 += kColBlock) {
      const std::size_t len = std::min<std::size_t>(kColBlock, n_cols - j0);
      for (int r = 0; r < rows; r += 2) {
        const bool pair = r + 1 < rows;
        T* __restrict d0 = d + static_cast<std::size_t>(k + r) * n_cols + j0;
        T* __restrict d1 = pair ? d0 + n_cols : nullptr;
        for (int m = 0; m < m_rows; ++m) {
          const T a0 = a[static_cast<std::size_t>(m) * lda + k + r];
          const T* __restrict gm = g + static_cast<std::size_t>(m) * n_cols + j0;
          if (pair) {
            const T a1 = a[static_cast<std::size_t>(m) * lda + k + r + 1];
            for (std::size_t j = 0; j < len; ++j) {
              d0[j] += a0 * gm[j];
              d1[j] += a1 * gm[j];
            }
          } else {
            for (std::size_t j = 0; j < len; ++j) d0[j] += a0 * gm[j];
          }
        }
      }
    }
  });
}

// D[M x K] += G * B^T, G is M x N, B is K x N; D with row stride ldd.
template <typename T>
void gemm_nt(int m_rows, std::size_t n_cols, int k_depth, const T* g, const T* b, T* d, int ldd) {
  parallel_for(static_cast<std::size_t>(m_rows), [&](std::size_t mi) {
    const T* __restrict gm = g + mi * n_cols;
    T* dm = d + mi * static_cast<std::size_t>(ldd);
    int k = 0;
    for (; k + 4 <= k_depth; k += 4) {
      const T* __restrict b0 = b + static_cast<std::size_t>(k) * n_cols;
      const T* __restrict b1 = b0 + n_cols;
      const T* __restrict b2 = b1 + n_cols;
      const T* __restrict b3 = b2 + n_cols;
      T s0{0}, s1{0}, s2{0}, s3{0};
      for (std::size_t j = 0; j < n_cols; ++j) {
        const T gv = gm[j];
        s0 += gv * b0[j];
        s1 += gv * b1[j];
        s2 += gv * b2[j];
        s3 += gv * b3[j];
      }
      dm[k] += s0;
      dm[k + 1] += s1;
      dm[k + 2] += s2;
      dm[k + 3] += s3;
    }
    for (; k < k_depth; ++k) {
      const T* __restrict bk = b + static_cast<std::size_t>(k) * n_cols;
      T acc{0};
      for (std::size_t j = 0; j < n_cols; ++j) acc += gm[j] * bk[j];
      dm[k] += acc;
    }
  });
}

// Column matrix of group g: rows (icg, a, b), columns (n, oy, ox) across the batch.
struct ColGeom {
  int cin_g, kh, kw, oh, ow;
  ConvGeom geom;
  std::size_t plane() const { return static_cast<std::size_t>(oh) * ow; }
  int depth() const { return cin_g * kh * kw; }
};

template <typename T>
void im2col(const Tensor<T>& x, int g, const ColGeom& cg, T* col) {
  const Shape& xs = x.shape();
  const std::size_t p = cg.plane(), np = static_cast<std::size_t>(xs.n) * p;
  const int s = cg.geom.stride, pad = cg.geom.padding;
  for (int icg = 0; icg < cg.cin_g; ++icg) {
    for (int a = 0; a < cg.kh; ++a) {
      const Span1 rows = valid_outputs(cg.oh, xs.h, s, pad, a);
      for (int b = 0; b < cg.kw; ++b) {
        const Span1 cols = valid_outputs(cg.ow, xs.w, s, pad, b);
        T* dst = col + static_cast<std::size_t>((icg * cg.kh + a) * cg.kw + b) * np;
        for (int n = 0; n < xs.n; ++n) {
          T* d = dst + static_cast<std::size_t>(n) * p;
          const T* in = x.plane(n, g * cg.cin_g + icg);
          std::fill(d, d + p, T{0});
          for (int r = rows.lo; r < rows.hi; ++r) {
            T* drow = d + static_cast<std::size_t>(r) * cg.ow;
            const T* irow = in + static_cast<std::ptrdiff_t>(r * s - pad + a) * xs.w - pad + b;
            for (int c = cols.lo; c < cols.hi; ++c) drow[c] = irow[c * s];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int g, const ColGeom& cg, Tensor<T>& dx) {
  const Shape xs = dx.shape();
  const std::size_t p = cg.plane(), np = static_cast<std::size_t>(xs.n) * p;
  const int s = cg.geom.stride, pad = cg.geom.padding;
  for (int icg = 0; icg < cg.cin_g; ++icg) {
    for (int a = 0; a < cg.kh; ++a) {
      const Span1 rows = valid_outputs(cg.oh, xs.h, s, pad, a);
      for (int b = 0; b < cg.kw; ++b) {
        const Span1 cols = valid_outputs(cg.ow, xs.w, s, pad, b);
        const T* src = col + static_cast<std::size_t>((icg * cg.kh + a) * cg.kw + b) * np;
        for (int n = 0; n < xs.n; ++n) {
          const T* d = src + static_cast<std::size_t>(n) * p;
          T* out = dx.plane(n, g * cg.cin_g + icg);
          for (int r = rows.lo; r < rows.hi; ++r) {
            const T* drow = d + static_cast<std::size_t>(r) * cg.ow;
            T* orow = out + static_cast<std::ptrdiff_t>(r * s - pad + a) * xs.w - pad + b;
            for (int c = cols.lo; c < cols.hi; ++c) orow[c * s] += drow[c];
          }
        }
      }
    }
  }
}

bool is_depthwise(const Shape& kernel, int cout_g) { return kernel.c == 1 && cout_g == 1; }

// Rows [m0, m0 + rows) of a (channel, n, pixel) buffer <-> NCHW planes.
template <typename T>
void gather_rows(const Tensor<T>& t, int c0, int rows, T* buf) {
  const Shape& s = t.shape();
  const std::size_t p = s.plane();
  for (int m = 0; m < rows; ++m) {
    for (int n = 0; n < s.n; ++n) {
      const T* src = t.plane(n, c0 + m);
      std::copy(src, src + p, buf + (static_cast<std::size_t>(m) * s.n + n) * p);
    }
  }
}

template <typename T>
void scatter_rows(const T* buf, int c0, int rows, Tensor<T>& t) {
  const Shape s = t.shape();
  const std::size_t p = s.plane();
  for (int m = 0; m < rows; ++m) {
    for (int n = 0; n < s.n; ++n) {
      const T* src = buf + (static_cast<std::size_t>(m) * s.n + n) * p;
      std::copy(src, src + p, t.plane(n, c0 + m));
    }
  }
}

}  // namespace

// Non-depthwise convolutions run as one GEMM per group over the whole batch:
// out(C_out/g x N*P) = kernel(C_out/g x C_in/g*k*k) * col(C_in/g*k*k x N*P).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                                const ConvGeom& geom) {
  const Shape out_shape = conv2d_out_shape(x.shape(), kernel.shape(), geom);
  if (bias != nullptr && bias->size() != static_cast<std::size_t>(kernel.shape().n)) {
    throw ConfigError("conv2d: bias length does not match output channels");
  }
  const int cout_g = out_shape.c / geom.groups;
  if (is_depthwise(kernel.shape(), cout_g)) return conv2d_forward_direct(x, kernel, bias, geom);

  const ColGeom cg{kernel.shape().c, kernel.shape().h, kernel.shape().w, out_shape.h, out_shape.w, geom};
  const std::size_t np = static_cast<std::size_t>(out_shape.n) * cg.plane();
  const bool direct_in = is_pointwise(kernel.shape(), geom) && x.shape().n == 1;
  const bool direct_out = out_shape.n == 1;
  Tensor<T> y(out_shape);
  std::vector<T> col(direct_in ? 0 : static_cast<std::size_t>(cg.depth()) * np);
  std::vector<T> ybuf(direct_out ? 0 : static_cast<std::size_t>(cout_g) * np);
  for (int g = 0; g < geom.groups; ++g) {
    const T* b = x.plane(0, g * cg.cin_g);
    if (!direct_in) {
      im2col(x, g, cg, col.data());
      b = col.data();
    }
    T* out = direct_out ? y.plane(0, g * cout_g) : ybuf.data();
    if (bias != nullptr) {
      for (int m = 0; m < cout_g; ++m) {
        std::fill(out + static_cast<std::size_t>(m) * np, out + static_cast<std::size_t>(m + 1) * np,
                  (*bias)[g * cout_g + m]);
      }
    } else if (!direct_out) {
      std::fill(ybuf.begin(), ybuf.end(), T{0});
    }
    gemm_nn(cout_g, np, cg.depth(), kernel.data().data() + static_cast<std::size_t>(g) * cout_g * cg.depth(),
            cg.depth(), b, out);
    if (!direct_out) scatter_rows(ybuf.data(), g * cout_g, cout_g, y);
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& kernel,
                                const Shape& input_shape, const ConvGeom& geom) {
  const Shape out_shape = conv2d_out_shape(input_shape, kernel.shape(), geom);
  require_same_shape(out_shape, dy.shape(), "conv2d backward");
  const int cout_g = out_shape.c / geom.groups;
  if (is_depthwise(kernel.shape(), cout_g)) {
    return conv2d_backward_input_direct(dy, kernel, input_shape, geom);
  }
  const ColGeom cg{kernel.shape().c, kernel.shape().h, kernel.shape().w, out_shape.h, out_shape.w, geom};
  const std::size_t np = static_cast<std::size_t>(out_shape.n) * cg.plane();
  const bool direct_in = is_pointwise(kernel.shape(), geom) && input_shape.n == 1;
  const bool direct_out = out_shape.n == 1;
  Tensor<T> dx(input_shape);
  std::vector<T> dcol(direct_in ? 0 : static_cast<std::size_t>(cg.depth()) * np);
  std::vector<T> gbuf(direct_out ? 0 : static_cast<std::size_t>(cout_g) * np);
  for (int g = 0; g < geom.groups; ++g) {
    const T* gm = dy.plane(0, g * cout_g);
    if (!direct_out) {
      gather_rows(dy, g * cout_g, cout_g, gbuf.data());
      gm = gbuf.data();
    }
    T* d = direct_in ? dx.plane(0, g * cg.cin_g) : dcol.data();
    if (!direct_in) std::fill(dcol.begin(), dcol.end(), T{0});
    gemm_tn(cout_g, np, cg.depth(), kernel.data().data() + static_cast<std::size_t>(g) * cout_g * cg.depth(),
            cg.depth(), gm, d);
    if (!direct_in) col2im_add(dcol.data(), g, cg, dx);
  }
  return dx;
}

template <typename T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& dy, const Tensor<T>& x,
                                 const Shape& kernel_shape, const ConvGeom& geom) {
  const Shape out_shape = conv2d_out_shape(x.shape(), kernel_shape, geom);
  require_same_shape(out_shape, dy.shape(), "conv2d backward");
  const int cout_g = out_shape.c / geom.groups;
  if (is_depthwise(kernel_shape, cout_g)) return conv2d_backward_kernel_direct(dy, x, kernel_shape, geom);

  const ColGeom cg{kernel_shape.c, kernel_shape.h, kernel_shape.w, out_shape.h, out_shape.w, geom};
  const std::size_t np = static_cast<std::size_t>(out_shape.n) * cg.plane();
  const bool direct_in = is_pointwise(kernel_shape, geom) && x.shape().n == 1;
  const bool direct_out = out_shape.n == 1;
  Tensor<T> dk(kernel_shape);
  std::vector<T> col(direct_in ? 0 : static_cast<std::size_t>(cg.depth()) * np);
  std::vector<T> gbuf(direct_out ? 0 : static_cast<std::size_t>(cout_g) * np);
  for (int g = 0; g < geom.groups; ++g) {
    const T* b = x.plane(0, g * cg.cin_g);
    if (!direct_in) {
      im2col(x, g, cg, col.data());
      b = col.data();
    }
    const T* gm = dy.plane(0, g * cout_g);
    if (!direct_out) {
      gather_rows(dy, g * cout_g, cout_g, gbuf.data());
      gm = gbuf.data();
    }
    gemm_nt(cout_g, np, cg.depth(), gm, b, dk.data().data() + static_cast<std::size_t>(g) * cout_g * cg.depth(),
            cg.depth());
  }
  return dk;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& t) {
  const Shape& s = t.shape();
  Tensor<T> out({1, s.c, 1, 1});
  for (int c = 0; c < s.c; ++c) {
    T acc{0};
    for (int n = 0; n < s.n; ++n) {
      const T* pl = t.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += pl[i];
    }
    out[c] = acc;
  }
  return out;
}

void ska_check(const Shape& x, const Shape& w, int kernel, int groups) {
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("SKA kernel must be odd and positive");
  if (groups <= 0 || x.c % groups != 0) {
    throw ConfigError("SKA groups " + std::to_string(groups) + " must divide channels " +
                      std::to_string(x.c));
  }
  if (w.c != groups * kernel * kernel) {
    throw ConfigError("SKA weight map has " + std::to_string(w.c) + " channels, expected G*K_S^2 = " +
                      std::to_string(groups * kernel * kernel));
  }
  if (w.n != x.n || w.h != x.h || w.w != x.w) {
    throw ConfigError("SKA weight map " + w.str() + " does not match input " + x.str());
  }
}

template <typename T>
Tensor<T> ska_forward_naive(const Tensor<T>& x, const Tensor<T>& w, int kernel, int groups) {
  ska_check(x.shape(), w.shape(), kernel, groups);
  const Shape& s = x.shape();
  const int r = (kernel - 1) / 2;
  const int per_group = s.c / groups;
  Tensor<T> y(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const int g = c / per_group;
      for (int i = 0; i < s.h; ++i) {
        for (int j = 0; j < s.w; ++j) {
          T acc{0};
          for (int u = 0; u < kernel; ++u) {
            for (int v = 0; v < kernel; ++v) {
              const int ii = i + u - r, jj = j + v - r;
              if (ii < 0 || ii >= s.h || jj < 0 || jj >= s.w) continue;
              acc += w.at(n, g * kernel * kernel + u * kernel + v, i, j) * x.at(n, c, ii, jj);
            }
          }
          y.at(n, c, i, j) = acc;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> ska_forward_fast(const Tensor<T>& x, const Tensor<T>& w, int kernel, int groups) {
  ska_check(x.shape(), w.shape(), kernel, groups);
  const Shape& s = x.shape();
  const int r = (kernel - 1) / 2;
  const int per_group = s.c / groups;
  Tensor<T> y(s);
  parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t job) {
    const int n = static_cast<int>(job / s.c);
    const int c = static_cast<int>(job % s.c);
    const int g = c / per_group;
    T* out = y.plane(n, c);
    const T* in = x.plane(n, c);
    for (int u = 0; u < kernel; ++u) {
      const int di = u - r;
      const int i0 = std::max(0, -di), i1 = std::min(s.h, s.h - di);
      for (int v = 0; v < kernel; ++v) {
        const int dj = v - r;
        const int j0 = std::max(0, -dj), j1 = std::min(s.w, s.w - dj);
        const T* wp = w.plane(n, g * kernel * kernel + u * kernel + v);
        for (int i = i0; i < i1; ++i) {
          T* orow = out + static_cast<std::size_t>(i) * s.w;
          const T* wrow = wp + static_cast<std::size_t>(i) * s.w;
          const T* irow = in + static_cast<std::size_t>(i + di) * s.w + dj;
          for (int j = j0; j < j1; ++j) orow[j] += wrow[j] * irow[j];
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> ska_backward_input(const Tensor<T>& dy, const Tensor<T>& w, int kernel, int groups) {
  const Shape& s = dy.shape();
  ska_check(s, w.shape(), kernel, groups);
  const int r = (kernel - 1) / 2;
  const int per_group = s.c / groups;
  Tensor<T> dx(s);
  parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t job) {
    const int n = static_cast<int>(job / s.c);
    const int c = static_cast<int>(job % s.c);
    const int g = c / per_group;
    const T* dout = dy.plane(n, c);
    T* din = dx.plane(n, c);
    for (int u = 0; u < kernel; ++u) {
      const int di = u - r;
      const int i0 = std::max(0, -di), i1 = std::min(s.h, s.h - di);
      for (int v = 0; v < kernel; ++v) {
        const int dj = v - r;
        const int j0 = std::max(0, -dj), j1 = std::min(s.w, s.w - dj);
        const T* wp = w.plane(n, g * kernel * kernel + u * kernel + v);
        for (int i = i0; i < i1; ++i) {
          const T* orow = dout + static_cast<std::size_t>(i) * s.w;
          const T* wrow = wp + static_cast<std::size_t>(i) * s.w;
          T* irow = din + static_cast<std::size_t>(i + di) * s.w + dj;
          for (int j = j0; j < j1; ++j) irow[j] += wrow[j] * orow[j];
        }
      }
    }
  });
  return dx;
}

template <typename T>
Tensor<T> ska_backward_weight(const Tensor<T>& dy, const Tensor<T>& x, int kernel, int groups) {
  const Shape& s = x.shape();
  require_same_shape(s, dy.shape(), "SKA backward");
  const int r = (kernel - 1) / 2;
  const int per_group = s.c / groups;
  const int taps = kernel * kernel;
  Tensor<T> dw({s.n, groups * taps, s.h, s.w});
  parallel_for(static_cast<std::size_t>(s.n) * groups * taps, [&](std::size_t job) {
    const int n = static_cast<int>(job / (groups * taps));
    const int d = static_cast<int>(job % (groups * taps));
    const int g = d / taps, u = (d % taps) / kernel, v = d % kernel;
    const int di = u - r, dj = v - r;
    const int i0 = std::max(0, -di), i1 = std::min(s.h, s.h - di);
    const int j0 = std::max(0, -dj), j1 = std::min(s.w, s.w - dj);
    T* wp = dw.plane(n, d);
    for (int cg = 0; cg < per_group; ++cg) {
      const int c = g * per_group + cg;
      const T* dout = dy.plane(n, c);
      const T* in = x.plane(n, c);
      for (int i = i0; i < i1; ++i) {
        T* wrow = wp + static_cast<std::size_t>(i) * s.w;
        const T* orow = dout + static_cast<std::size_t>(i) * s.w;
        const T* irow = in + static_cast<std::size_t>(i + di) * s.w + dj;
        for (int j = j0; j < j1; ++j) wrow[j] += orow[j] * irow[j];
      }
    }
  });
  return dw;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::size_t len = static_cast<std::size_t>(x.shape().w);
  if (len == 0) return y;
  const std::size_t rows = x.size() / len;
  for (std::size_t row = 0; row < rows; ++row) {
    const T* in = x.data().data() + row * len;
    T* out = y.data().data() + row * len;
    const T mx = *std::max_element(in, in + len);
    T total{0};
    for (std::size_t i = 0; i < len; ++i) {
      out[i] = std::exp(in[i] - mx);
      total += out[i];
    }
    for (std::size_t i = 0; i < len; ++i) out[i] /= total;
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h < 1 || s.w < 1) throw ConfigError("global_avg_pool needs H, W >= 1");
  Tensor<T> y({s.n, s.c, 1, 1});
  const T inv = T{1} / static_cast<T>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* pl = x.plane(n, c);
      T acc{0};
      for (std::size_t i = 0; i < s.plane(); ++i) acc += pl[i];
      y.at(n, c, 0, 0) = acc * inv;
    }
  }
  return y;
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n != bs.n || as.c != bs.c) throw ConfigError("batched_matmul: batch extents differ");
  const int m = trans_a ? as.w : as.h, k = trans_a ? as.h : as.w;
  const int kb = trans_b ? bs.w : bs.h, p = trans_b ? bs.h : bs.w;
  if (k != kb) throw ConfigError("batched_matmul: inner extents " + as.str() + " x " + bs.str());
  Tensor<T> y({as.n, as.c, m, p});
  parallel_for(static_cast<std::size_t>(as.n) * as.c, [&](std::size_t job) {
    const int n = static_cast<int>(job / as.c), c = static_cast<int>(job % as.c);
    const T* ap = a.plane(n, c);
    const T* bp = b.plane(n, c);
    T* yp = y.plane(n, c);
    for (int i = 0; i < m; ++i) {
      T* yrow = yp + static_cast<std::size_t>(i) * p;
      for (int t = 0; t < k; ++t) {
        const T av = trans_a ? ap[static_cast<std::size_t>(t) * as.w + i]
                             : ap[static_cast<std::size_t>(i) * as.w + t];
        if (trans_b) {
          for (int j = 0; j < p; ++j) yrow[j] += av * bp[static_cast<std::size_t>(j) * bs.w + t];
        } else {
          const T* brow = bp + static_cast<std::size_t>(t) * bs.w;
          for (int j = 0; j < p; ++j) yrow[j] += av * brow[j];
        }
      }
    }
  });
  return y;
}

#define LSNET_INSTANTIATE(T)                                                                     \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,        \
                                    const ConvGeom&);                                            \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const Shape&,     \
                                           const ConvGeom&);                                     \
  template Tensor<T> conv2d_backward_kernel(const Tensor<T>&, const Tensor<T>&, const Shape&,    \
                                            const ConvGeom&);                                    \
  template Tensor<T> channel_sum(const Tensor<T>&);                                              \
  template Tensor<T> ska_forward_naive(const Tensor<T>&, const Tensor<T>&, int, int);            \
  template Tensor<T> ska_forward_fast(const Tensor<T>&, const Tensor<T>&, int, int);             \
  template Tensor<T> ska_backward_input(const Tensor<T>&, const Tensor<T>&, int, int);           \
  template Tensor<T> ska_backward_weight(const Tensor<T>&, const Tensor<T>&, int, int);          \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                          \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

}  // namespace lsnet
