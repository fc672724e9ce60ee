#include "doctest.h"
#include "lsnet/blocks.hpp"
#include "support.hpp"

using namespace lsnet;
using lsnet::test::random_tensor;

namespace {

BlockConfig block_cfg(int c, MixerKind mixer, int group_width = 4) {
  BlockConfig b;
  b.channels = c;
  b.mixer = mixer;
  b.ls = LsConvConfig::defaults(c, group_width);
  b.msa = MsaConfig{c, 2, 4};
  return b;
}

ParamStore<double> store_for(const std::function<void(ParamLayout&)>& declare, std::uint64_t seed = 1) {
  ParamLayout layout;
  declare(layout);
  return initialize<double>(layout, seed);
}

}  // namespace

TEST_CASE("SE layer") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({2, 8, 5, 5}, rng);
  ParamStore<double> store = store_for([](ParamLayout& l) { declare_se(l, "se", 8, 4); });
  Tape<double> tape(false);
  Graph<double> graph(tape, store, Mode::infer);

  SUBCASE("zero parameters halve the input") {
    test::zero_store(store);
    const auto y = se_layer(graph, tape.constant(x), "se").value();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.5 * x[i]);
  }
  SUBCASE("saturated gate passes the input through") {
    test::zero_store(store);
    store.get_mut("se.expand.bias").fill(20.0);
    const auto y = se_layer(graph, tape.constant(x), "se").value();
    CHECK(max_abs_diff(y, x) < 1e-6);
  }
  SUBCASE("gate never increases magnitude") {
    test::randomize_store(store, 2, 3.0);
    const auto y = se_layer(graph, tape.constant(x), "se").value();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(se_layer(graph, tape.constant(Tensor<double>({1, 4, 2, 2})), "se"), ConfigError);
  }
}

TEST_CASE("FFN") {
  std::mt19937_64 rng(2);
  ParamStore<double> store = store_for([](ParamLayout& l) { declare_ffn(l, "ffn", 64, 2); });
  CHECK(store.get("ffn.pw1.weight").shape() == Shape{128, 64, 1, 1});
  const auto x = random_tensor<double>({1, 64, 4, 4}, rng);
  {
    test::zero_store(store);
    Tape<double> tape(false);
    Graph<double> graph(tape, store, Mode::infer);
    CHECK(ffn(graph, tape.constant(x), "ffn").value().vec() == x.vec());
    CHECK_THROWS_AS(ffn(graph, tape.constant(Tensor<double>({1, 32, 2, 2})), "ffn"), ConfigError);
  }
  ParamStore<double> small = store_for([](ParamLayout& l) { declare_ffn(l, "ffn", 4, 2); });
  test::randomize_store(small, 3);
  const auto r = test::check_graph(small, random_tensor<double>({2, 4, 3, 3}, rng),
                                   [](Graph<double>& g, Var<double> v) { return ffn(g, v, "ffn"); });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("multi-head attention") {
  std::mt19937_64 rng(3);
  const MsaConfig cfg{8, 2, 4};
  ParamStore<double> store = store_for([&](ParamLayout& l) { declare_msa(l, "msa", cfg); });
  test::randomize_store(store, 4);
  Tape<double> tape(false);
  Graph<double> graph(tape, store, Mode::infer);

  SUBCASE("attention rows sum to one") {
    const auto res = multi_head_attention(graph, tape.constant(random_tensor<double>({2, 8, 3, 4}, rng)), "msa", cfg);
    const Tensor<double>& a = res.attention.value();
    CHECK(a.shape() == Shape{2, 2, 12, 12});
    for (std::size_t row = 0; row < a.size() / 12; ++row) {
      double s = 0;
      for (int j = 0; j < 12; ++j) s += a[row * 12 + j];
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  SUBCASE("one token: output is the projected value") {
    const auto x = random_tensor<double>({1, 8, 1, 1}, rng);
    const auto y = multi_head_attention(graph, tape.constant(x), "msa", cfg).output.value();
    auto conv = [&](const Tensor<double>& in, const std::string& p) {
      const Tensor<double>& b = store.get(p + ".bias");
      return conv2d_forward(in, store.get(p + ".weight"), &b, ConvGeom{});
    };
    CHECK(max_abs_diff(y, conv(conv(x, "msa.v"), "msa.proj")) < 1e-12);
  }
  SUBCASE("permuting tokens permutes outputs") {
    const auto x = random_tensor<double>({1, 8, 3, 4}, rng);
    std::vector<int> perm{5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6};
    Tensor<double> xp(x.shape());
    for (int c = 0; c < 8; ++c)
      for (int t = 0; t < 12; ++t) xp.plane(0, c)[t] = x.plane(0, c)[perm[t]];
    const auto y = multi_head_attention(graph, tape.constant(x), "msa", cfg).output.value();
    const auto yp = multi_head_attention(graph, tape.constant(xp), "msa", cfg).output.value();
    double worst = 0;
    for (int c = 0; c < 8; ++c)
      for (int t = 0; t < 12; ++t) worst = std::max(worst, std::abs(yp.plane(0, c)[t] - y.plane(0, c)[perm[t]]));
    CHECK(worst < 1e-12);
  }
  SUBCASE("heads must divide channels") {
    CHECK_THROWS_AS((MsaConfig{8, 3, 4}.validate()), ConfigError);
  }
}

TEST_CASE("blocks: zeroed branches are the identity and shapes are preserved") {
  std::mt19937_64 rng(4);
  for (MixerKind mixer : {MixerKind::ls, MixerKind::msa, MixerKind::none}) {
    const BlockConfig cfg = block_cfg(64, mixer, 8);
    ParamStore<double> store = store_for([&](ParamLayout& l) { declare_block(l, "blk", cfg); });
    const auto x = random_tensor<double>({1, 64, 16, 16}, rng);
    {
      Tape<double> tape(false);
      Graph<double> graph(tape, store, Mode::infer);
      CHECK(block(graph, tape.constant(x), "blk", cfg).shape() == x.shape());
    }
    test::zero_store(store);
    Tape<double> tape(false);
    Graph<double> graph(tape, store, Mode::infer);
    const auto y = block(graph, tape.constant(x), "blk", cfg).value();
    CHECK(y.vec() == x.vec());
  }
}

TEST_CASE("blocks: ablation flags remove exactly their ops") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 16, 8, 8}, rng);
  auto ops = [&](bool dw, bool se) {
    BlockConfig cfg = block_cfg(16, MixerKind::ls);
    cfg.dw = dw;
    cfg.se = se;
    ParamStore<double> store = store_for([&](ParamLayout& l) { declare_block(l, "blk", cfg); });
    test::randomize_store(store, 6);
    Tape<double> tape(false);
    Graph<double> graph(tape, store, Mode::infer);
    const auto y = block(graph, tape.constant(x), "blk", cfg).value();
    return std::make_tuple(tape.count("conv2d"), tape.count("sigmoid"), y);
  };
  const auto [conv_full, sig_full, y_full] = ops(true, true);
  const auto [conv_nodw, sig_nodw, y_nodw] = ops(false, true);
  const auto [conv_nose, sig_nose, y_nose] = ops(true, false);
  CHECK(conv_full - conv_nodw == 1);
  CHECK(sig_full == sig_nodw);
  CHECK(sig_full - sig_nose == 1);
  CHECK(max_abs_diff(y_full, y_nodw) > 1e-6);
  CHECK(max_abs_diff(y_full, y_nose) > 1e-6);
}

TEST_CASE("blocks: two-block toy model gradients") {
  std::mt19937_64 rng(6);
  const BlockConfig ls = block_cfg(8, MixerKind::ls), msa = block_cfg(8, MixerKind::msa);
  ParamStore<double> store = store_for([&](ParamLayout& l) {
    declare_block(l, "b0", ls);
    declare_block(l, "b1", msa);
  });
  test::randomize_store(store, 7);
  const auto r = test::check_graph(store, random_tensor<double>({2, 8, 4, 4}, rng),
                                   [&](Graph<double>& g, Var<double> v) {
                                     return block(g, block(g, v, "b0", ls), "b1", msa);
                                   }, 7);
  CHECK(r.checked > 100);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("stem") {
  const std::array<int, 3> ladder{16, 32, 64};
  ParamStore<float> store;
  {
    ParamLayout l;
    declare_stem(l, "stem", ladder);
    store = initialize<float>(l, 1);
  }
  Tape<float> tape(false);
  Graph<float> graph(tape, store, Mode::infer);
  CHECK(stem(graph, tape.constant(Tensor<float>({1, 3, 224, 224})), "stem", ladder).shape() == Shape{1, 64, 28, 28});
  CHECK(stem(graph, tape.constant(Tensor<float>({2, 3, 32, 32})), "stem", ladder).shape() == Shape{2, 64, 4, 4});
  CHECK_THROWS_AS(stem(graph, tape.constant(Tensor<float>({1, 3, 30, 30})), "stem", ladder), ConfigError);
  CHECK_THROWS_AS(stem(graph, tape.constant(Tensor<float>({1, 1, 32, 32})), "stem", ladder), ConfigError);
}

TEST_CASE("downsample") {
  std::mt19937_64 rng(7);
  ParamStore<double> store = store_for([](ParamLayout& l) { declare_downsample(l, "down", 64, 128); });
  Tape<double> tape(false);
  Graph<double> graph(tape, store, Mode::infer);
  CHECK(downsample(graph, tape.constant(Tensor<double>({1, 64, 16, 16})), "down").shape() == Shape{1, 128, 8, 8});
  // Odd extents round up.
  CHECK(downsample(graph, tape.constant(Tensor<double>({1, 64, 7, 7})), "down").shape() == Shape{1, 128, 4, 4});

  SUBCASE("all-ones depthwise and identity pointwise scale the interior by 9") {
    ParamStore<double> s = store_for([](ParamLayout& l) { declare_downsample(l, "down", 2, 2); });
    s.get_mut("down.dw.weight").fill(1.0);
    Tensor<double>& pw = s.get_mut("down.pw.weight");
    pw.fill(0.0);
    pw.at(0, 0, 0, 0) = pw.at(1, 1, 0, 0) = 1.0;
    Tape<double> t(false);
    Graph<double> g(t, s, Mode::infer);
    const auto y = downsample(g, t.constant(Tensor<double>({1, 2, 8, 8}, 1.5)), "down").value();
    const double bn = 1.0 / std::sqrt(1.0 + kBnEps);
    for (int c = 0; c < 2; ++c) CHECK(y.at(0, c, 2, 2) == doctest::Approx(1.5 * 9 * bn * bn).epsilon(1e-12));
  }
  SUBCASE("gradients") {
    ParamStore<double> s = store_for([](ParamLayout& l) { declare_downsample(l, "down", 4, 6); });
    test::randomize_store(s, 8);
    const auto r = test::check_graph(s, random_tensor<double>({2, 4, 6, 6}, rng),
                                     [](Graph<double>& g, Var<double> v) { return downsample(g, v, "down"); });
    CHECK(r.max_rel_error < 1e-4);
  }
}
