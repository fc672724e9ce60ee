#include "lsnet/ls_conv.hpp"

#include "lsnet/checked.hpp"

namespace lsnet {

void LsConvConfig::validate() const {
  if (channels <= 0 || channels % 2 != 0) {
    throw ConfigError("LS conv needs a positive even channel count, got " + std::to_string(channels));
  }
  if (groups <= 0 || channels % groups != 0) {
    throw ConfigError("LS conv groups " + std::to_string(groups) + " must divide " +
                      std::to_string(channels) + " channels");
  }
  if (large_kernel <= 0 || large_kernel % 2 == 0 || small_kernel <= 0 || small_kernel % 2 == 0) {
    throw ConfigError("LS conv kernels must be odd and positive");
  }
  if (large_kernel < small_kernel) throw ConfigError("LS conv requires K_L >= K_S");
}

LsConvConfig LsConvConfig::defaults(int channels, int group_width) {
  if (group_width <= 0 || channels % group_width != 0) {
    throw ConfigError("group width " + std::to_string(group_width) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  LsConvConfig cfg;
  cfg.channels = channels;
  cfg.groups = channels / group_width;
  cfg.validate();
  return cfg;
}

WeightIndex weight_index(int d, int small_kernel) {
  const int taps = small_kernel * small_kernel;
  return {d / taps, (d % taps) / small_kernel, d % small_kernel};
}

void declare_lkp(ParamLayout& layout, const std::string& prefix, const LsConvConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels, h = cfg.hidden();
  layout.conv_bn(prefix + ".pw_reduce", h, c, 1, 1);
  if (cfg.large_dw) layout.conv_bn(prefix + ".dw_large", h, h, cfg.large_kernel, h);
  layout.conv_bn(prefix + ".pw_mid", h, h, 1, 1);
  layout.conv(prefix + ".pw_expand", cfg.weight_dim(), h, 1, 1, true);
}

std::uint64_t lkp_kernel_weight_count(const LsConvConfig& cfg) {
  const std::uint64_t c = cfg.channels, h = cfg.hidden(), d = cfg.weight_dim();
  const std::uint64_t k = cfg.large_dw ? static_cast<std::uint64_t>(cfg.large_kernel) : 0;
  return c * h + h * k * k + h * h + h * d;
}

template <typename T>
LkpParams<T> LkpParams<T>::random(const LsConvConfig& cfg, std::uint64_t seed) {
  ParamLayout layout;
  declare_lkp(layout, "lkp", cfg);
  return from_store(initialize<T>(layout, seed), "lkp", cfg);
}

template <typename T>
void LkpParams<T>::to_store(ParamStore<T>& store, const std::string& prefix) const {
  store_conv(store, prefix + ".pw_reduce", pw_reduce);
  store_bn(store, prefix + ".pw_reduce", bn_reduce);
  if (!dw_large.kernel.empty()) {
    store_conv(store, prefix + ".dw_large", dw_large);
    store_bn(store, prefix + ".dw_large", bn_large);
  }
  store_conv(store, prefix + ".pw_mid", pw_mid);
  store_bn(store, prefix + ".pw_mid", bn_mid);
  store_conv(store, prefix + ".pw_expand", pw_expand);
}

template <typename T>
LkpParams<T> LkpParams<T>::from_store(const ParamStore<T>& store, const std::string& prefix,
                                      const LsConvConfig& cfg) {
  auto conv = [&](const std::string& name, ConvGeom geom) {
    ConvParams<T> p{store.get(prefix + name + ".weight"), std::nullopt, geom};
    if (store.contains(prefix + name + ".bias")) p.bias = store.get(prefix + name + ".bias");
    return p;
  };
  auto bn = [&](const std::string& name) {
    const std::string b = prefix + name + ".bn.";
    return BnParams<T>{store.get(b + "scale"), store.get(b + "shift"), store.get(b + "running_mean"),
                       store.get(b + "running_var")};
  };
  LkpParams<T> p;
  p.pw_reduce = conv(".pw_reduce", {});
  p.bn_reduce = bn(".pw_reduce");
  if (cfg.large_dw) {
    p.dw_large = conv(".dw_large", {1, (cfg.large_kernel - 1) / 2, cfg.hidden()});
    p.bn_large = bn(".dw_large");
  }
  p.pw_mid = conv(".pw_mid", {});
  p.bn_mid = bn(".pw_mid");
  p.pw_expand = conv(".pw_expand", {});
  return p;
}

template <typename T>
Var<T> lkp(Graph<T>& graph, Var<T> x, const std::string& prefix, const LsConvConfig& cfg) {
  cfg.validate();
  if (x.shape().c != cfg.channels) {
    throw ConfigError("LKP expects " + std::to_string(cfg.channels) + " channels, got " +
                      std::to_string(x.shape().c));
  }
  auto scope = graph.tape().scope("lkp");
  Var<T> h = graph.conv_bn(x, prefix + ".pw_reduce", {}, true);
  if (cfg.large_dw) {
    h = graph.conv_bn(h, prefix + ".dw_large", {1, (cfg.large_kernel - 1) / 2, cfg.hidden()}, true);
  }
  h = graph.conv_bn(h, prefix + ".pw_mid", {}, true);
  return graph.conv(h, prefix + ".pw_expand", {});
}

template <typename T>
Var<T> ls_conv(Graph<T>& graph, Var<T> x, const std::string& prefix, const LsConvConfig& cfg) {
  Var<T> w = graph.weight_map(prefix, lkp(graph, x, prefix + ".lkp", cfg));
  auto scope = graph.tape().scope("ska");
  return ska(x, w, cfg.small_kernel, cfg.groups);
}

template <typename T>
Tensor<T> lkp_forward(const Tensor<T>& x, const LkpParams<T>& p, const LsConvConfig& cfg, Mode mode) {
  ParamStore<T> store;
  p.to_store(store, "lkp");
  Tape<T> tape(false);
  Graph<T> graph(tape, store, mode);
  return lkp(graph, tape.constant(x), "lkp", cfg).value();
}

template <typename T>
Tensor<T> ska_forward(const Tensor<T>& x, const Tensor<T>& weights, const LsConvConfig& cfg) {
  if (x.shape().c != cfg.channels) throw ConfigError("SKA input channel count differs from config");
  return ska_forward_fast(x, weights, cfg.small_kernel, cfg.groups);
}

template <typename T>
Tensor<T> ska_forward_naive(const Tensor<T>& x, const Tensor<T>& weights, const LsConvConfig& cfg) {
  if (x.shape().c != cfg.channels) throw ConfigError("SKA input channel count differs from config");
  return ska_forward_naive(x, weights, cfg.small_kernel, cfg.groups);
}

template <typename T>
Tensor<T> ls_conv_forward(const Tensor<T>& x, const LkpParams<T>& p, const LsConvConfig& cfg,
                          Mode mode) {
  ParamStore<T> store;
  p.to_store(store, "ls.lkp");
  Tape<T> tape(false);
  Graph<T> graph(tape, store, mode);
  return ls_conv(graph, tape.constant(x), "ls", cfg).value();
}

std::uint64_t LsConvMacs::itemized() const {
  return checked_add(checked_add(pointwise, depthwise), aggregation);
}

LsConvMacs ls_conv_macs(const LsConvConfig& cfg, std::int64_t height, std::int64_t width) {
  cfg.validate();
  if (height <= 0 || width <= 0) throw ConfigError("ls_conv_macs needs positive extents");
  const std::uint64_t hw = checked_mul(static_cast<std::uint64_t>(height), static_cast<std::uint64_t>(width));
  const std::uint64_t c = cfg.channels, half = cfg.hidden(), d = cfg.weight_dim();
  const std::uint64_t kl = cfg.large_kernel, ks = cfg.small_kernel, g = cfg.groups;

  LsConvMacs m;
  // Layer by layer: C->C/2, C/2->C/2 and C/2->D pointwise convolutions.
  m.pointwise = checked_add(checked_add(checked_mul(hw, c, half), checked_mul(hw, half, half)),
                            checked_mul(hw, half, d));
  m.depthwise = cfg.large_dw ? checked_mul(hw, half, kl * kl) : 0;
  m.aggregation = checked_mul(hw, c, ks * ks);

  const std::uint64_t bracket =
      checked_add(checked_add(checked_mul(3, c), cfg.large_dw ? checked_mul(2, kl * kl) : 0),
                  checked_mul(checked_add(checked_mul(2, g), 4), ks * ks));
  const std::uint64_t numerator = checked_mul(checked_mul(hw, c), bracket);
  if (numerator % 4 != 0) throw ArithmeticError("closed-form MAC count is not an integer");
  m.closed_form = numerator / 4;
  return m;
}

#define LSNET_INSTANTIATE(T)                                                                       \
  template struct LkpParams<T>;                                                                    \
  template Var<T> lkp(Graph<T>&, Var<T>, const std::string&, const LsConvConfig&);                 \
  template Var<T> ls_conv(Graph<T>&, Var<T>, const std::string&, const LsConvConfig&);             \
  template Tensor<T> lkp_forward(const Tensor<T>&, const LkpParams<T>&, const LsConvConfig&, Mode); \
  template Tensor<T> ska_forward(const Tensor<T>&, const Tensor<T>&, const LsConvConfig&);         \
  template Tensor<T> ska_forward_naive(const Tensor<T>&, const Tensor<T>&, const LsConvConfig&);   \
  template Tensor<T> ls_conv_forward(const Tensor<T>&, const LkpParams<T>&, const LsConvConfig&, Mode);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

}  // namespace lsnet
