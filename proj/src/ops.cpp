#include "lsnet/ops.hpp"

#include <cmath>
#include <vector>

namespace lsnet {
namespace {

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ConfigError("operands recorded on different tapes");
  return *a.tape;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias, ConvGeom geom) {
  Tape<T>& tape = tape_of(x, kernel);
  const Tensor<T>* bias_value = bias ? &bias->value() : nullptr;
  Tensor<T> y = conv2d_forward(x.value(), kernel.value(), bias_value, geom);
  const Shape& ks = kernel.shape();
  tape.add_macs(static_cast<std::uint64_t>(y.size()) * ks.c * ks.h * ks.w);
  const std::size_t xi = x.id, ki = kernel.id;
  const std::size_t bi = bias ? bias->id : 0;
  const bool has_bias = bias.has_value();
  if (has_bias) {
    return tape.record("conv2d", std::move(y), {xi, ki, bi},
                       [=](Tape<T>& t, const Tensor<T>& g) {
                         const Tensor<T>& xv = t.value(xi);
                         const Tensor<T>& kv = t.value(ki);
                         if (t.needs_grad(xi)) t.accumulate(xi, conv2d_backward_input(g, kv, xv.shape(), geom));
                         if (t.needs_grad(ki)) t.accumulate(ki, conv2d_backward_kernel(g, xv, kv.shape(), geom));
                         if (t.needs_grad(bi)) {
                           t.accumulate(bi, channel_sum(g).reshaped(t.value(bi).shape()));
                         }
                       });
  }
  return tape.record("conv2d", std::move(y), {xi, ki}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& kv = t.value(ki);
    if (t.needs_grad(xi)) t.accumulate(xi, conv2d_backward_input(g, kv, xv.shape(), geom));
    if (t.needs_grad(ki)) t.accumulate(ki, conv2d_backward_kernel(g, xv, kv.shape(), geom));
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> scale, Var<T> shift, RunningStats<T> stats, Mode mode) {
  Tape<T>& tape = tape_of(x, scale);
  const Tensor<T>& xv = x.value();
  const Shape& s = xv.shape();
  if (scale.value().size() != static_cast<std::size_t>(s.c) ||
      shift.value().size() != static_cast<std::size_t>(s.c)) {
    throw ConfigError("batch_norm: scale/shift length does not match " + std::to_string(s.c) +
                      " channels");
  }
  const std::size_t count = static_cast<std::size_t>(s.n) * s.plane();
  const T eps = static_cast<T>(kBnEps);
  std::vector<T> mean(s.c), inv_std(s.c);
  if (mode == Mode::train) {
    if (count == 0) throw ConfigError("batch_norm: empty batch");
    for (int c = 0; c < s.c; ++c) {
      T acc{0};
      for (int n = 0; n < s.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      }
      const T mu = acc / static_cast<T>(count);
      T sq{0};
      for (int n = 0; n < s.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const T var = sq / static_cast<T>(count);
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(var + eps);
      if (stats.mean != nullptr && stats.var != nullptr) {
        const T m = static_cast<T>(kBnMomentum);
        const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
        (*stats.mean)[c] = (T{1} - m) * (*stats.mean)[c] + m * mu;
        (*stats.var)[c] = (T{1} - m) * (*stats.var)[c] + m * unbiased;
      }
    }
  } else {
    if (stats.mean == nullptr || stats.var == nullptr) {
      throw ConfigError("batch_norm: infer mode needs running statistics");
    }
    for (int c = 0; c < s.c; ++c) {
      mean[c] = (*stats.mean)[c];
      inv_std[c] = T{1} / std::sqrt((*stats.var)[c] + eps);
    }
  }
  const Tensor<T>& gamma = scale.value();
  const Tensor<T>& beta = shift.value();
  Tensor<T> y(s);
  Tensor<T> xhat(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = xv.plane(n, c);
      T* hp = xhat.plane(n, c);
      T* yp = y.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        hp[i] = (p[i] - mean[c]) * inv_std[c];
        yp[i] = gamma[c] * hp[i] + beta[c];
      }
    }
  }
  const std::size_t xi = x.id, si = scale.id, bi = shift.id;
  return tape.record(
      "batch_norm", std::move(y), {xi, si, bi},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& gam = t.value(si);
        Tensor<T> dscale(gam.shape()), dshift(gam.shape());
        for (int c = 0; c < s.c; ++c) {
          T ds{0}, db{0};
          for (int n = 0; n < s.n; ++n) {
            const T* gp = g.plane(n, c);
            const T* hp = xhat.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
              ds += gp[i] * hp[i];
              db += gp[i];
            }
          }
          dscale[c] = ds;
          dshift[c] = db;
        }
        if (t.needs_grad(xi)) {
          Tensor<T> dx(s);
          for (int c = 0; c < s.c; ++c) {
            const T k = gam[c] * inv_std[c];
            if (mode == Mode::train) {
              const T mean_g = dshift[c] / static_cast<T>(count);
              const T mean_gh = dscale[c] / static_cast<T>(count);
              for (int n = 0; n < s.n; ++n) {
                const T* gp = g.plane(n, c);
                const T* hp = xhat.plane(n, c);
                T* dp = dx.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                  dp[i] = k * (gp[i] - mean_g - hp[i] * mean_gh);
                }
              }
            } else {
              for (int n = 0; n < s.n; ++n) {
                const T* gp = g.plane(n, c);
                T* dp = dx.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) dp[i] = k * gp[i];
              }
            }
          }
          t.accumulate(xi, std::move(dx));
        }
        if (t.needs_grad(si)) t.accumulate(si, std::move(dscale));
        if (t.needs_grad(bi)) t.accumulate(bi, std::move(dshift));
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  const std::size_t xi = x.id;
  return x.tape->record("relu", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(xi);
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = xv[i] > T{0} ? g[i] : T{0};
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = T{1} / (T{1} + std::exp(-v));
  const std::size_t xi = x.id;
  const std::size_t yi = x.tape->size();  // id the output node will get
  return x.tape->record("sigmoid", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& yv = t.value(yi);
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * yv[i] * (T{1} - yv[i]);
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y = a.value();
  y += b.value();
  const std::size_t ai = a.id, bi = b.id;
  return tape.record("add", std::move(y), {ai, bi}, [=](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> y = x.value();
  y *= factor;
  const std::size_t xi = x.id;
  return x.tape->record("scale", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx = g;
    dx *= factor;
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> channel_gate(Var<T> x, Var<T> gate) {
  Tape<T>& tape = tape_of(x, gate);
  const Shape& s = x.shape();
  const Shape& gs = gate.shape();
  if (gs.n != s.n || gs.c != s.c || gs.h != 1 || gs.w != 1) {
    throw ConfigError("channel_gate: gate " + gs.str() + " does not fit " + s.str());
  }
  Tensor<T> y = x.value();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T gv = gate.value().at(n, c, 0, 0);
      T* p = y.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] *= gv;
    }
  }
  const std::size_t xi = x.id, gi = gate.id;
  return tape.record("channel_gate", std::move(y), {xi, gi}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& gv = t.value(gi);
    if (t.needs_grad(xi)) {
      Tensor<T> dx = g;
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          T* p = dx.plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) p[i] *= gv.at(n, c, 0, 0);
        }
      }
      t.accumulate(xi, std::move(dx));
    }
    if (t.needs_grad(gi)) {
      Tensor<T> dg(gv.shape());
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const T* gp = g.plane(n, c);
          const T* xp = xv.plane(n, c);
          T acc{0};
          for (std::size_t i = 0; i < s.plane(); ++i) acc += gp[i] * xp[i];
          dg.at(n, c, 0, 0) = acc;
        }
      }
      t.accumulate(gi, std::move(dg));
    }
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  Tensor<T> y = global_avg_pool(x.value());
  const std::size_t xi = x.id;
  const Shape s = x.shape();
  return x.tape->record("global_avg_pool", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(s);
    const T inv = T{1} / static_cast<T>(s.plane());
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T v = g.at(n, c, 0, 0) * inv;
        T* p = dx.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) p[i] = v;
      }
    }
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> ska(Var<T> x, Var<T> w, int kernel, int groups) {
  Tape<T>& tape = tape_of(x, w);
  Tensor<T> y = ska_forward_fast(x.value(), w.value(), kernel, groups);
  tape.add_macs(static_cast<std::uint64_t>(y.size()) * kernel * kernel);
  const std::size_t xi = x.id, wi = w.id;
  return tape.record("ska", std::move(y), {xi, wi}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.needs_grad(xi)) t.accumulate(xi, ska_backward_input(g, t.value(wi), kernel, groups));
    if (t.needs_grad(wi)) t.accumulate(wi, ska_backward_weight(g, t.value(xi), kernel, groups));
  });
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  Tensor<T> y = softmax_lastdim(x.value());
  const std::size_t xi = x.id;
  const std::size_t yi = x.tape->size();
  return x.tape->record("softmax", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& yv = t.value(yi);
    const std::size_t len = static_cast<std::size_t>(yv.shape().w);
    Tensor<T> dx(yv.shape());
    for (std::size_t row = 0; row < yv.size() / len; ++row) {
      T dot{0};
      for (std::size_t i = 0; i < len; ++i) dot += g[row * len + i] * yv[row * len + i];
      for (std::size_t i = 0; i < len; ++i) {
        dx[row * len + i] = yv[row * len + i] * (g[row * len + i] - dot);
      }
    }
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b, bool trans_a, bool trans_b) {
  Tape<T>& tape = tape_of(a, b);
  Tensor<T> y = batched_matmul(a.value(), b.value(), trans_a, trans_b);
  tape.add_macs(static_cast<std::uint64_t>(y.size()) * (trans_a ? a.shape().h : a.shape().w));
  const std::size_t ai = a.id, bi = b.id;
  return tape.record("matmul", std::move(y), {ai, bi}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(ai);
    const Tensor<T>& bv = t.value(bi);
    // Y = op(A) op(B): dA = G op(B)^T (transposed back if A was), dB likewise.
    if (t.needs_grad(ai)) {
      t.accumulate(ai, trans_a ? batched_matmul(bv, g, trans_b, true)
                               : batched_matmul(g, bv, false, !trans_b));
    }
    if (t.needs_grad(bi)) {
      t.accumulate(bi, trans_b ? batched_matmul(g, av, true, trans_a)
                               : batched_matmul(av, g, !trans_a, false));
    }
  });
}

template <typename T>
Var<T> split_heads(Var<T> x, int heads) {
  const Shape s = x.shape();
  if (heads <= 0 || s.c % heads != 0) {
    throw ConfigError("split_heads: " + std::to_string(heads) + " heads do not divide " +
                      std::to_string(s.c) + " channels");
  }
  const int d = s.c / heads;
  const int tokens = s.h * s.w;
  Tensor<T> y({s.n, heads, tokens, d});
  const Tensor<T>& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < heads; ++h)
      for (int k = 0; k < d; ++k) {
        const T* p = xv.plane(n, h * d + k);
        for (int tk = 0; tk < tokens; ++tk) y.at(n, h, tk, k) = p[tk];
      }
  const std::size_t xi = x.id;
  return x.tape->record("split_heads", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(s);
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < heads; ++h)
        for (int k = 0; k < d; ++k) {
          T* p = dx.plane(n, h * d + k);
          for (int tk = 0; tk < tokens; ++tk) p[tk] = g.at(n, h, tk, k);
        }
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> merge_heads(Var<T> x, int height, int width) {
  const Shape s = x.shape();
  if (s.h != height * width) throw ConfigError("merge_heads: token count mismatch");
  const int heads = s.c, d = s.w;
  Tensor<T> y({s.n, heads * d, height, width});
  const Tensor<T>& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < heads; ++h)
      for (int k = 0; k < d; ++k) {
        T* p = y.plane(n, h * d + k);
        for (int tk = 0; tk < s.h; ++tk) p[tk] = xv.at(n, h, tk, k);
      }
  const std::size_t xi = x.id;
  return x.tape->record("merge_heads", std::move(y), {xi}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(s);
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < heads; ++h)
        for (int k = 0; k < d; ++k) {
          const T* p = g.plane(n, h * d + k);
          for (int tk = 0; tk < s.h; ++tk) dx.at(n, h, tk, k) = p[tk];
        }
    t.accumulate(xi, std::move(dx));
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, T smoothing) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ConfigError("cross_entropy expects (N,K,1,1) logits");
  if (labels.size() != static_cast<std::size_t>(s.n)) {
    throw ConfigError("cross_entropy: label count does not match batch");
  }
  const int k = s.c;
  const Tensor<T>& lv = logits.value();
  Tensor<T> probs({s.n, k, 1, 1});
  std::vector<T> target(static_cast<std::size_t>(s.n) * k);
  T loss{0};
  for (int n = 0; n < s.n; ++n) {
    if (labels[n] < 0 || labels[n] >= k) throw DataError("label out of range");
    T mx = lv.at(n, 0, 0, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, lv.at(n, c, 0, 0));
    T total{0};
    for (int c = 0; c < k; ++c) total += std::exp(lv.at(n, c, 0, 0) - mx);
    const T log_total = std::log(total) + mx;
    for (int c = 0; c < k; ++c) {
      const T q = (c == labels[n] ? T{1} - smoothing : T{0}) + smoothing / static_cast<T>(k);
      target[static_cast<std::size_t>(n) * k + c] = q;
      const T logp = lv.at(n, c, 0, 0) - log_total;
      probs.at(n, c, 0, 0) = std::exp(logp);
      loss -= q * logp;
    }
  }
  loss /= static_cast<T>(s.n);
  const std::size_t li = logits.id;
  return logits.tape->record(
      "cross_entropy", Tensor<T>({1, 1, 1, 1}, loss), {li},
      [=, probs = std::move(probs), target = std::move(target)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> dl(s);
        const T scale_by = g[0] / static_cast<T>(s.n);
        for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = (probs[i] - target[i]) * scale_by;
        t.accumulate(li, std::move(dl));
      });
}

#define LSNET_INSTANTIATE(T)                                                                    \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, ConvGeom);                      \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, RunningStats<T>, Mode);                    \
  template Var<T> relu(Var<T>);                                                                 \
  template Var<T> sigmoid(Var<T>);                                                              \
  template Var<T> add(Var<T>, Var<T>);                                                          \
  template Var<T> scale(Var<T>, T);                                                             \
  template Var<T> channel_gate(Var<T>, Var<T>);                                                 \
  template Var<T> global_avg_pool(Var<T>);                                                      \
  template Var<T> ska(Var<T>, Var<T>, int, int);                                                \
  template Var<T> softmax_lastdim(Var<T>);                                                      \
  template Var<T> batched_matmul(Var<T>, Var<T>, bool, bool);                                   \
  template Var<T> split_heads(Var<T>, int);                                                     \
  template Var<T> merge_heads(Var<T>, int, int);                                                \
  template Var<T> cross_entropy(Var<T>, std::span<const int>, T);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

}  // namespace lsnet
