#include <numeric>

#include "doctest.h"
#include "lsnet/ls_conv.hpp"
#include "support.hpp"

using namespace lsnet;
using lsnet::test::random_tensor;

namespace {

LsConvConfig config(int c, int kl, int ks, int g) {
  LsConvConfig cfg;
  cfg.channels = c;
  cfg.large_kernel = kl;
  cfg.small_kernel = ks;
  cfg.groups = g;
  return cfg;
}

template <typename T>
Tensor<T> delta_map(int n, int groups, int k, int h, int w) {
  Tensor<T> m({n, groups * k * k, h, w});
  for (int b = 0; b < n; ++b)
    for (int g = 0; g < groups; ++g) std::fill(m.plane(b, g * k * k + k * k / 2), m.plane(b, g * k * k + k * k / 2) + h * w, T{1});
  return m;
}

// LKP parameters with weights large enough that the weight map is far from zero.
LkpParams<double> lively_lkp(const LsConvConfig& cfg, std::uint64_t seed) {
  LkpParams<double> p = LkpParams<double>::random(cfg, seed);
  std::mt19937_64 rng(seed + 100);
  for (ConvParams<double>* c : {&p.pw_reduce, &p.dw_large, &p.pw_mid, &p.pw_expand}) {
    if (c->kernel.empty()) continue;
    c->kernel = random_tensor<double>(c->kernel.shape(), rng, -0.5, 0.5);
  }
  p.pw_expand.bias = random_tensor<double>({1, cfg.weight_dim(), 1, 1}, rng, -0.2, 0.2);
  return p;
}

}  // namespace

TEST_CASE("config: derived weight width and validation") {
  const LsConvConfig d = LsConvConfig::defaults(64);
  CHECK(d.large_kernel == 7);
  CHECK(d.small_kernel == 3);
  CHECK(d.groups == 8);
  CHECK(d.weight_dim() == 72);
  CHECK_THROWS_AS(config(63, 7, 3, 1).validate(), ConfigError);
  CHECK_THROWS_AS(config(64, 7, 3, 5).validate(), ConfigError);
  CHECK_THROWS_AS(config(64, 6, 3, 8).validate(), ConfigError);
  CHECK_THROWS_AS(config(64, 7, 4, 8).validate(), ConfigError);
  CHECK_THROWS_AS(config(64, 3, 5, 8).validate(), ConfigError);
  CHECK_NOTHROW(config(64, 7, 3, 8).validate());
}

TEST_CASE("weight map index is row-major (group, row, col)") {
  for (int k : {1, 3, 5})
    for (int d = 0; d < 4 * k * k; ++d) {
      const WeightIndex wi = weight_index(d, k);
      CHECK(wi.group * k * k + wi.row * k + wi.col == d);
      CHECK(wi.row < k);
      CHECK(wi.col < k);
    }
}

TEST_CASE("lkp: shapes, homogeneity and kernel weight count") {
  const LsConvConfig cfg = config(64, 7, 3, 8);
  const LkpParams<float> p = LkpParams<float>::random(cfg, 1);
  std::mt19937_64 rng(1);
  const Tensor<float> w = lkp_forward(random_tensor<float>({1, 64, 16, 16}, rng), p, cfg);
  CHECK(w.shape() == Shape{1, 72, 16, 16});
  // Initial biases are zero and norms are identity, so zero in gives zero out.
  const Tensor<float> zero = lkp_forward(Tensor<float>({1, 64, 16, 16}), p, cfg);
  CHECK(zero.max_abs() == 0.0f);
  CHECK(lkp_kernel_weight_count(cfg) == 2048u + 1568u + 1024u + 2304u);
  CHECK(lkp_kernel_weight_count(cfg) == 6944u);
  CHECK_THROWS_AS(lkp_forward(Tensor<float>({1, 32, 8, 8}), p, cfg), ConfigError);
}

TEST_CASE("ska: optimized kernel equals the naive transcription on random instances") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  int configs = 0;
  double worst64 = 0, worst32 = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int c = 8 * (1 + pick(rng) % 4);
    const int ks = 1 + 2 * (pick(rng) % 3);
    const int choices[3] = {1, c / 8, c};
    const int g = choices[pick(rng) % 3];
    const Shape s{1 + pick(rng) % 2, c, 1 + pick(rng) % 9, 1 + pick(rng) % 9};
    const auto x = random_tensor<double>(s, rng);
    const auto w = random_tensor<double>({s.n, g * ks * ks, s.h, s.w}, rng);
    worst64 = std::max(worst64, max_abs_diff(ska_forward_fast(x, w, ks, g), ska_forward_naive(x, w, ks, g)));
    const auto xf = x.cast<float>(), wf = w.cast<float>();
    worst32 = std::max(worst32, double(max_abs_diff(ska_forward_fast(xf, wf, ks, g), ska_forward_naive(xf, wf, ks, g))));
    ++configs;
  }
  CHECK(configs >= 100);
  CHECK(worst64 < 1e-12);
  CHECK(worst32 < 1e-5);

  const auto x = random_tensor<double>({2, 16, 8, 8}, rng);
  const auto w = random_tensor<double>({2, 2 * 9, 8, 8}, rng);
  CHECK(max_abs_diff(ska_forward_fast(x, w, 3, 2), ska_forward_naive(x, w, 3, 2)) < 1e-12);
}

TEST_CASE("ska: degenerate weight maps") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({2, 8, 7, 6}, rng);
  for (int k : {1, 3, 5})
    for (int g : {1, 2, 8}) {
      const auto delta = delta_map<double>(2, g, k, 7, 6);
      CHECK(ska_forward_fast(x, delta, k, g).vec() == x.vec());
      CHECK(ska_forward_naive(x, delta, k, g).vec() == x.vec());
      CHECK(ska_forward_fast(x, Tensor<double>(delta.shape()), k, g).max_abs() == 0.0);
      CHECK(ska_forward_naive(x, Tensor<double>(delta.shape()), k, g).max_abs() == 0.0);
    }

  SUBCASE("uniform 1/K^2 weights give a zero-padded box filter") {
    const int k = 3;
    const Tensor<double> w({2, 2 * k * k, 7, 6}, 1.0 / (k * k));
    const auto y = ska_forward_fast(x, w, k, 2);
    double worst = 0;
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 7; ++i)
          for (int j = 0; j < 6; ++j) {
            double box = 0;
            for (int u = -1; u <= 1; ++u)
              for (int v = -1; v <= 1; ++v)
                if (i + u >= 0 && i + u < 7 && j + v >= 0 && j + v < 6) box += x.at(n, c, i + u, j + v);
            worst = std::max(worst, std::abs(y.at(n, c, i, j) - box / 9.0));
          }
    CHECK(worst < 1e-14);
  }
  SUBCASE("K_S = 1 and one group is a per-pixel gate") {
    const auto w = random_tensor<double>({2, 1, 7, 6}, rng);
    const auto y = ska_forward_fast(x, w, 1, 1);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 7; ++i)
          for (int j = 0; j < 6; ++j) CHECK(y.at(n, c, i, j) == w.at(n, 0, i, j) * x.at(n, c, i, j));
  }
  SUBCASE("weight width must be G*K^2") {
    CHECK_THROWS_AS(ska_forward_fast(x, Tensor<double>({2, 17, 7, 6}), 3, 2), ConfigError);
    CHECK_THROWS_AS(ska_forward_naive(x, Tensor<double>({2, 18, 7, 6}), 3, 3), ConfigError);
  }
}

TEST_CASE("ska property: bilinear in input and weights") {
  std::mt19937_64 rng(4);
  const Shape s{1, 16, 9, 9};
  const auto x1 = random_tensor<float>(s, rng), x2 = random_tensor<float>(s, rng);
  const auto w1 = random_tensor<float>({1, 18, 9, 9}, rng), w2 = random_tensor<float>({1, 18, 9, 9}, rng);
  const float a = 0.6f, b = -1.7f;
  auto combo = [&](const Tensor<float>& p, const Tensor<float>& q) {
    Tensor<float> r(p.shape());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * p[i] + b * q[i];
    return r;
  };
  CHECK(max_abs_diff(ska_forward_fast(combo(x1, x2), w1, 3, 2),
                     combo(ska_forward_fast(x1, w1, 3, 2), ska_forward_fast(x2, w1, 3, 2))) < 1e-5f);
  CHECK(max_abs_diff(ska_forward_fast(x1, combo(w1, w2), 3, 2),
                     combo(ska_forward_fast(x1, w1, 3, 2), ska_forward_fast(x1, w2, 3, 2))) < 1e-5f);
}

TEST_CASE("ska property: channels within a group share weights") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 12, 6, 6}, rng);
  const auto w = random_tensor<double>({1, 3 * 9, 6, 6}, rng);
  // Reverse the 4 channels of group 1 (channels 4..7).
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin() + 4, perm.begin() + 8);
  Tensor<double> xp(x.shape());
  for (int c = 0; c < 12; ++c) std::copy(x.plane(0, perm[c]), x.plane(0, perm[c]) + 36, xp.plane(0, c));
  const auto y = ska_forward_fast(x, w, 3, 3), yp = ska_forward_fast(xp, w, 3, 3);
  for (int c = 0; c < 12; ++c) CHECK(std::equal(yp.plane(0, c), yp.plane(0, c) + 36, y.plane(0, perm[c])));
}

TEST_CASE("ls conv: composition, shape and non-linearity") {
  const LsConvConfig cfg = config(64, 7, 3, 8);
  const LkpParams<double> p = lively_lkp(cfg, 6);
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({1, 64, 16, 16}, rng), a = random_tensor<double>({1, 64, 16, 16}, rng);
  const auto y = ls_conv_forward(x, p, cfg);
  CHECK(y.shape() == x.shape());
  CHECK(y.vec() == ska_forward(x, lkp_forward(x, p, cfg), cfg).vec());
  Tensor<double> sum(x.shape());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = x[i] + a[i];
  const auto ys = ls_conv_forward(sum, p, cfg), ya = ls_conv_forward(a, p, cfg);
  double gap = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) gap += std::abs(ys[i] - y[i] - ya[i]);
  CHECK(gap > 1e-3);
}

TEST_CASE("ls conv property: translation equivariant on the interior") {
  const LsConvConfig cfg = config(16, 7, 3, 2);
  const LkpParams<double> p = lively_lkp(cfg, 7);
  std::mt19937_64 rng(7);
  const int size = 20, dy = 2, dx = 3, reach = 3 + 1;
  const auto x = random_tensor<double>({1, 16, size, size}, rng);
  Tensor<double> shifted(x.shape());
  for (int c = 0; c < 16; ++c)
    for (int i = dy; i < size; ++i)
      for (int j = dx; j < size; ++j) shifted.at(0, c, i, j) = x.at(0, c, i - dy, j - dx);
  const auto y = ls_conv_forward(x, p, cfg), ys = ls_conv_forward(shifted, p, cfg);
  double worst = 0;
  int compared = 0;
  for (int c = 0; c < 16; ++c)
    for (int i = reach; i + dy < size - reach; ++i)
      for (int j = reach; j + dx < size - reach; ++j) {
        worst = std::max(worst, std::abs(ys.at(0, c, i + dy, j + dx) - y.at(0, c, i, j)));
        ++compared;
      }
  CHECK(compared > 0);
  CHECK(worst < 1e-12);
}

TEST_CASE("ls conv: gradients through SKA and LKP match central differences") {
  const LsConvConfig cfg = config(8, 5, 3, 2);
  ParamStore<double> store;
  lively_lkp(cfg, 8).to_store(store, "ls.lkp");
  std::mt19937_64 rng(8);
  const auto x = random_tensor<double>({2, 8, 6, 6}, rng);
  Tensor<double> r;

  auto loss = [&](const ParamStore<double>& s, const Tensor<double>& input) {
    ParamStore<double> copy = s;
    Tape<double> tape(false);
    Graph<double> graph(tape, copy, Mode::train);
    return test::weighted_sum(ls_conv(graph, graph.input(input), "ls", cfg).value(), r);
  };

  Tape<double> tape;
  ParamStore<double> work = store;
  Graph<double> graph(tape, work, Mode::train);
  const Var<double> y = ls_conv(graph, graph.input(x, true), "ls", cfg);
  r = random_tensor<double>(y.shape(), rng);
  const Gradients<double> g = tape.backward(y, r);

  double worst = 0;
  auto compare = [&](double analytic, double plus, double minus, double h) {
    const double numeric = (plus - minus) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-2}));
  };
  for (std::size_t i = 0; i < x.size(); i += 7) {
    auto xp = x, xm = x;
    const double h = 1e-4 * std::max(1.0, std::abs(x[i]));
    xp[i] += h;
    xm[i] -= h;
    compare(g.at("input")[i], loss(store, xp), loss(store, xm), h);
  }
  for (const auto& [name, entry] : store.entries()) {
    if (!entry.learnable) continue;
    for (std::size_t i = 0; i < entry.value.size(); i += 5) {
      auto sp = store, sm = store;
      const double h = 1e-4 * std::max(1.0, std::abs(entry.value[i]));
      sp.get_mut(name)[i] += h;
      sm.get_mut(name)[i] -= h;
      compare(g.at(name)[i], loss(sp, x), loss(sm, x), h);
    }
  }
  CHECK(worst < 1e-4);

  const auto zero = tape.backward(y, Tensor<double>(y.shape()));
  for (const auto& [name, t] : zero.all()) CHECK(t.max_abs() == 0.0);
}

TEST_CASE("MAC model: closed form equals the itemized tally") {
  const LsConvMacs worked = ls_conv_macs(config(256, 7, 3, 32), 14, 14);
  CHECK(worked.closed_form == 18540032u);
  CHECK(worked.itemized() == 18540032u);

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 * (1 + pick(rng) % 256);
    std::vector<int> divisors;
    for (int g = 1; g <= c; ++g)
      if (c % g == 0) divisors.push_back(g);
    const int g = divisors[pick(rng) % divisors.size()];
    const int ks = 1 + 2 * (pick(rng) % 4);
    const int kl = ks + 2 * (pick(rng) % 5);
    const int h = 1 + pick(rng) % 128, w = 1 + pick(rng) % 128;
    const LsConvMacs m = ls_conv_macs(config(c, kl, ks, g), h, w);
    // Independent evaluation of the closed form in 128-bit arithmetic.
    const unsigned __int128 hwc = static_cast<unsigned __int128>(h) * w * c;
    const unsigned __int128 closed = hwc * (3u * c + 2u * kl * kl + (2u * g + 4u) * ks * ks) / 4u;
    REQUIRE(m.itemized() == m.closed_form);
    CHECK(static_cast<unsigned __int128>(m.closed_form) == closed);
  }
}

TEST_CASE("MAC model: linear in resolution, overflow detected") {
  const LsConvConfig cfg = config(96, 7, 3, 12);
  CHECK(ls_conv_macs(cfg, 28, 14).closed_form == 2 * ls_conv_macs(cfg, 14, 14).closed_form);
  CHECK_THROWS_AS(ls_conv_macs(cfg, 0, 14), ConfigError);
  CHECK_THROWS_AS(ls_conv_macs(cfg, std::int64_t{1} << 40, std::int64_t{1} << 30), ArithmeticError);
  LsConvConfig no_dw = cfg;
  no_dw.large_dw = false;
  CHECK(ls_conv_macs(no_dw, 14, 14).depthwise == 0u);
}
