#include "lsnet/blocks.hpp"

#include <cmath>

namespace lsnet {

void MsaConfig::validate() const {
  if (heads <= 0 || channels % heads != 0) {
    throw ConfigError("MSA: " + std::to_string(heads) + " heads do not divide " +
                      std::to_string(channels) + " channels");
  }
  if (key_dim <= 0) throw ConfigError("MSA: key dimension must be positive");
}

int BlockConfig::se_hidden() const { return std::max(1, channels / se_reduction); }

void BlockConfig::validate() const {
  if (channels <= 0) throw ConfigError("block needs a positive channel count");
  if (ffn_ratio <= 0 || se_reduction <= 0) throw ConfigError("block ratios must be positive");
  if (mixer == MixerKind::ls) {
    ls.validate();
    if (ls.channels != channels) throw ConfigError("LS conv config channel mismatch");
  }
  if (mixer == MixerKind::msa) {
    msa.validate();
    if (msa.channels != channels) throw ConfigError("MSA config channel mismatch");
  }
}

void declare_se(ParamLayout& layout, const std::string& prefix, int channels, int reduction) {
  const int hidden = std::max(1, channels / reduction);
  layout.conv(prefix + ".reduce", hidden, channels, 1, 1, true);
  layout.conv(prefix + ".expand", channels, hidden, 1, 1, true);
}

void declare_ffn(ParamLayout& layout, const std::string& prefix, int channels, int ratio) {
  layout.conv_bn(prefix + ".pw1", channels * ratio, channels, 1, 1);
  layout.conv_bn(prefix + ".pw2", channels, channels * ratio, 1, 1);
}

void declare_msa(ParamLayout& layout, const std::string& prefix, const MsaConfig& cfg) {
  cfg.validate();
  const int qk = cfg.heads * cfg.key_dim;
  layout.conv(prefix + ".q", qk, cfg.channels, 1, 1, true);
  layout.conv(prefix + ".k", qk, cfg.channels, 1, 1, true);
  layout.conv(prefix + ".v", cfg.channels, cfg.channels, 1, 1, true);
  layout.conv(prefix + ".proj", cfg.channels, cfg.channels, 1, 1, true);
}

void declare_block(ParamLayout& layout, const std::string& prefix, const BlockConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  if (cfg.dw) layout.conv_bn(prefix + ".dw", c, c, 3, c);
  if (cfg.se) declare_se(layout, prefix + ".se", c, cfg.se_reduction);
  if (cfg.mixer == MixerKind::ls) {
    declare_lkp(layout, prefix + ".mixer.lkp", cfg.ls);
    layout.bn(prefix + ".mixer", c);
  } else if (cfg.mixer == MixerKind::msa) {
    declare_msa(layout, prefix + ".mixer", cfg.msa);
  }
  declare_ffn(layout, prefix + ".ffn", c, cfg.ffn_ratio);
}

void declare_stem(ParamLayout& layout, const std::string& prefix, const std::array<int, 3>& ladder) {
  int in = 3;
  for (int i = 0; i < 3; ++i) {
    layout.conv_bn(prefix + ".conv" + std::to_string(i + 1), ladder[i], in, 3, 1);
    in = ladder[i];
  }
}

void declare_downsample(ParamLayout& layout, const std::string& prefix, int in_ch, int out_ch) {
  layout.conv_bn(prefix + ".dw", in_ch, in_ch, 3, in_ch);
  layout.conv_bn(prefix + ".pw", out_ch, in_ch, 1, 1);
}

template <typename T>
Var<T> se_layer(Graph<T>& graph, Var<T> x, const std::string& prefix) {
  auto scope = graph.tape().scope("se");
  const int c = x.shape().c;
  if (graph.store().get(prefix + ".expand.weight").shape().n != c) {
    throw ConfigError("SE layer " + prefix + " does not match " + std::to_string(c) + " channels");
  }
  Var<T> s = global_avg_pool(x);
  s = relu(graph.conv(s, prefix + ".reduce", {}));
  s = sigmoid(graph.conv(s, prefix + ".expand", {}));
  return channel_gate(x, s);
}

template <typename T>
Var<T> ffn(Graph<T>& graph, Var<T> x, const std::string& prefix) {
  auto scope = graph.tape().scope("ffn");
  if (graph.store().get(prefix + ".pw1.weight").shape().c != x.shape().c) {
    throw ConfigError("FFN " + prefix + " does not match " + std::to_string(x.shape().c) + " channels");
  }
  Var<T> h = graph.conv_bn(x, prefix + ".pw1", {}, true);
  h = graph.conv_bn(h, prefix + ".pw2", {}, false);
  return add(x, h);
}

template <typename T>
AttentionResult<T> multi_head_attention(Graph<T>& graph, Var<T> x, const std::string& prefix,
                                        const MsaConfig& cfg) {
  cfg.validate();
  const Shape s = x.shape();
  if (s.c != cfg.channels) throw ConfigError("MSA channel mismatch");
  auto scope = graph.tape().scope("msa");
  Var<T> q = split_heads(graph.conv(x, prefix + ".q", {}), cfg.heads);
  Var<T> k = split_heads(graph.conv(x, prefix + ".k", {}), cfg.heads);
  Var<T> v = split_heads(graph.conv(x, prefix + ".v", {}), cfg.heads);
  Var<T> scores = scale(batched_matmul(q, k, false, true),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.key_dim))));
  Var<T> attn = softmax_lastdim(scores);
  Var<T> mixed = merge_heads(batched_matmul(attn, v, false, false), s.h, s.w);
  return {graph.conv(mixed, prefix + ".proj", {}), attn};
}

template <typename T>
Var<T> block(Graph<T>& graph, Var<T> x, const std::string& prefix, const BlockConfig& cfg) {
  cfg.validate();
  if (x.shape().c != cfg.channels) {
    throw ConfigError("block " + prefix + " expects " + std::to_string(cfg.channels) +
                      " channels, got " + std::to_string(x.shape().c));
  }
  Var<T> h = x;
  if (cfg.dw || cfg.se) {
    Var<T> branch = x;
    if (cfg.dw) {
      auto scope = graph.tape().scope("block_dw");
      branch = graph.conv_bn(branch, prefix + ".dw", {1, 1, cfg.channels}, false);
    }
    if (cfg.se) branch = se_layer(graph, branch, prefix + ".se");
    h = add(x, branch);
  }
  if (cfg.mixer == MixerKind::ls) {
    Var<T> m = ls_conv(graph, h, prefix + ".mixer", cfg.ls);
    auto scope = graph.tape().scope("ls_norm");
    h = add(h, graph.bn(m, prefix + ".mixer"));
  } else if (cfg.mixer == MixerKind::msa) {
    h = add(h, multi_head_attention(graph, h, prefix + ".mixer", cfg.msa).output);
  }
  return ffn(graph, h, prefix + ".ffn");
}

template <typename T>
Var<T> stem(Graph<T>& graph, Var<T> image, const std::string& prefix,
            const std::array<int, 3>& ladder) {
  const Shape& s = image.shape();
  if (s.c != 3) throw ConfigError("stem expects 3 input channels, got " + std::to_string(s.c));
  if (s.h % 8 != 0 || s.w % 8 != 0 || s.h == 0 || s.w == 0) {
    throw ConfigError("stem needs H and W divisible by 8, got " + std::to_string(s.h) + "x" +
                      std::to_string(s.w));
  }
  auto scope = graph.tape().scope("stem");
  Var<T> h = image;
  for (int i = 0; i < 3; ++i) {
    h = graph.conv_bn(h, prefix + ".conv" + std::to_string(i + 1), {2, 1, 1}, true);
    if (h.shape().c != ladder[i]) throw ConfigError("stem channel ladder mismatch");
  }
  return h;
}

template <typename T>
Var<T> downsample(Graph<T>& graph, Var<T> x, const std::string& prefix) {
  auto scope = graph.tape().scope("downsample");
  Var<T> h = graph.conv_bn(x, prefix + ".dw", {2, 1, x.shape().c}, true);
  return graph.conv_bn(h, prefix + ".pw", {}, true);
}

#define LSNET_INSTANTIATE(T)                                                                      \
  template Var<T> se_layer(Graph<T>&, Var<T>, const std::string&);                                \
  template Var<T> ffn(Graph<T>&, Var<T>, const std::string&);                                     \
  template AttentionResult<T> multi_head_attention(Graph<T>&, Var<T>, const std::string&,         \
                                                   const MsaConfig&);                             \
  template Var<T> block(Graph<T>&, Var<T>, const std::string&, const BlockConfig&);               \
  template Var<T> stem(Graph<T>&, Var<T>, const std::string&, const std::array<int, 3>&);         \
  template Var<T> downsample(Graph<T>&, Var<T>, const std::string&);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

}  // namespace lsnet
