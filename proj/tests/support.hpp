#pragma once

// Helpers shared by the unit tests: random tensors, reference kernels written
// independently of the library, and a finite-difference VJP checker.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lsnet/layers.hpp"

namespace lsnet::test {

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Seven-loop convolution straight from the definition.
template <typename T>
Tensor<T> reference_conv(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>* bias, ConvGeom g) {
  const Shape xs = x.shape(), ks = k.shape();
  const int oh = (xs.h + 2 * g.padding - ks.h) / g.stride + 1;
  const int ow = (xs.w + 2 * g.padding - ks.w) / g.stride + 1;
  const int cin_g = xs.c / g.groups, cout_g = ks.n / g.groups;
  Tensor<T> y({xs.n, ks.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ks.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
          const int grp = o / cout_g;
          for (int q = 0; q < cin_g; ++q)
            for (int a = 0; a < ks.h; ++a)
              for (int b = 0; b < ks.w; ++b) {
                const int yy = i * g.stride - g.padding + a, xx = j * g.stride - g.padding + b;
                if (yy < 0 || xx < 0 || yy >= xs.h || xx >= xs.w) continue;
                acc += static_cast<double>(x.at(n, grp * cin_g + q, yy, xx)) * k.at(o, q, a, b);
              }
          y.at(n, o, i, j) = static_cast<T>(acc);
        }
  return y;
}

/// Σ out ⊙ r for a fixed random r: a scalar loss whose gradient seed is r.
inline double weighted_sum(const Tensor<double>& out, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

using GraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct VjpCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// Compares the tape gradient of Σ f(inputs) ⊙ r against central differences
/// with step 1e-4 * max(1, |theta|). The relative error floor is `floor`.
inline VjpCheck check_vjp(const std::vector<Tensor<double>>& inputs, const GraphFn& f,
                          std::uint64_t seed = 7, double floor = 1e-2, std::size_t max_per_input = 64) {
  std::mt19937_64 rng(seed);
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf("in" + std::to_string(i), inputs[i]));
  const Var<double> out = f(tape, leaves);
  const Tensor<double> r = random_tensor<double>(out.shape(), rng);
  const Gradients<double> grads = tape.backward(out, r);

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Tape<double> t(false);
    std::vector<Var<double>> ls;
    for (const auto& v : vals) ls.push_back(t.constant(v));
    return weighted_sum(f(t, ls).value(), r);
  };
  VjpCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& g = grads.at("in" + std::to_string(i));
    const std::size_t n = inputs[i].size();
    const std::size_t stride = n > max_per_input ? n / max_per_input : 1;
    for (std::size_t j = 0; j < n; j += stride) {
      std::vector<Tensor<double>> plus = inputs, minus = inputs;
      const double h = 1e-4 * std::max(1.0, std::abs(inputs[i][j]));
      plus[i][j] += h;
      minus[i][j] -= h;
      const double numeric = (eval(plus) - eval(minus)) / (2 * h);
      const double analytic = g[j];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

using StoreGraphFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

/// Central-difference check of every `stride`-th scalar of the input and of each
/// learnable store tensor for a train-mode graph built by f.
inline VjpCheck check_graph(const ParamStore<double>& store, const Tensor<double>& x, const StoreGraphFn& f,
                            std::size_t stride = 3, std::uint64_t seed = 11, double floor = 1e-2) {
  std::mt19937_64 rng(seed);
  Tape<double> tape;
  ParamStore<double> work = store;
  Graph<double> graph(tape, work, Mode::train);
  const Var<double> y = f(graph, graph.input(x, true));
  const Tensor<double> r = random_tensor<double>(y.shape(), rng);
  const Gradients<double> g = tape.backward(y, r);

  auto loss = [&](const ParamStore<double>& s, const Tensor<double>& input) {
    ParamStore<double> copy = s;
    Tape<double> t(false);
    Graph<double> gr(t, copy, Mode::train);
    return weighted_sum(f(gr, gr.input(input)).value(), r);
  };
  VjpCheck result;
  auto compare = [&](double analytic, double plus, double minus, double h) {
    const double numeric = (plus - minus) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  };
  for (std::size_t i = 0; i < x.size(); i += stride) {
    auto xp = x, xm = x;
    const double h = 1e-4 * std::max(1.0, std::abs(x[i]));
    xp[i] += h;
    xm[i] -= h;
    compare(g.at("input")[i], loss(store, xp), loss(store, xm), h);
  }
  for (const auto& [name, entry] : store.entries()) {
    if (!entry.learnable) continue;
    for (std::size_t i = 0; i < entry.value.size(); i += stride) {
      auto sp = store, sm = store;
      const double h = 1e-4 * std::max(1.0, std::abs(entry.value[i]));
      sp.get_mut(name)[i] += h;
      sm.get_mut(name)[i] -= h;
      compare(g.at(name)[i], loss(sp, x), loss(sm, x), h);
    }
  }
  return result;
}

/// Replaces every learnable tensor with uniform values: BN scales in [0.8, 1.2],
/// everything else in [-amp, amp].
inline void randomize_store(ParamStore<double>& store, std::uint64_t seed, double amp = 0.5) {
  std::mt19937_64 rng(seed);
  for (auto& [name, entry] : store.entries()) {
    if (!entry.learnable) continue;
    const bool bn_scale = name.size() > 6 && name.compare(name.size() - 6, 6, ".scale") == 0;
    entry.value = bn_scale ? random_tensor<double>(entry.value.shape(), rng, 0.8, 1.2)
                           : random_tensor<double>(entry.value.shape(), rng, -amp, amp);
  }
}

/// Sets every learnable tensor to zero.
inline void zero_store(ParamStore<double>& store) {
  for (auto& [name, entry] : store.entries())
    if (entry.learnable) entry.value.fill(0.0);
}

}  // namespace lsnet::test
