#pragma once

// Composite blocks: SE layer, FFN, LS/MSA blocks, stem and downsampling.
// Each comes as a declare_* (parameter layout) plus a graph-level forward.

#include <array>
#include <string>

#include "lsnet/ls_conv.hpp"

namespace lsnet {

enum class MixerKind { none, ls, msa };

struct MsaConfig {
  int channels = 0;
  int heads = 4;
  int key_dim = 16;

  int value_dim() const { return channels / heads; }
  void validate() const;
};

struct BlockConfig {
  int channels = 0;
  bool dw = true;
  bool se = true;
  MixerKind mixer = MixerKind::ls;
  LsConvConfig ls;
  MsaConfig msa;
  int ffn_ratio = 2;
  int se_reduction = 4;

  int ffn_hidden() const { return channels * ffn_ratio; }
  int se_hidden() const;
  void validate() const;
};

void declare_se(ParamLayout& layout, const std::string& prefix, int channels, int reduction);
void declare_ffn(ParamLayout& layout, const std::string& prefix, int channels, int ratio);
void declare_msa(ParamLayout& layout, const std::string& prefix, const MsaConfig& cfg);
void declare_block(ParamLayout& layout, const std::string& prefix, const BlockConfig& cfg);
void declare_stem(ParamLayout& layout, const std::string& prefix, const std::array<int, 3>& ladder);
void declare_downsample(ParamLayout& layout, const std::string& prefix, int in_ch, int out_ch);

/// x * sigmoid(PW2(relu(PW1(GAP(x))))).
template <typename T>
Var<T> se_layer(Graph<T>& graph, Var<T> x, const std::string& prefix);

/// x + BN(PW2(relu(BN(PW1(x))))).
template <typename T>
Var<T> ffn(Graph<T>& graph, Var<T> x, const std::string& prefix);

template <typename T>
struct AttentionResult {
  Var<T> output;     // projected mixer output (N, C, H, W), without residual
  Var<T> attention;  // softmax weights (N, heads, HW, HW)
};

/// Multi-head self-attention over the H*W tokens with 1x1-conv projections.
template <typename T>
AttentionResult<T> multi_head_attention(Graph<T>& graph, Var<T> x, const std::string& prefix,
                                        const MsaConfig& cfg);

/// Block wiring, each sub-path residual:
///   h = x + SE(BN(DW3x3(x)))          (local branch, parts optional)
///   h = h + mixer(h)                 (BN(LSConv(h)) or MHSA(h))
///   y = FFN(h)                       (FFN carries its own residual)
template <typename T>
Var<T> block(Graph<T>& graph, Var<T> x, const std::string& prefix, const BlockConfig& cfg);

/// Three 3x3 stride-2 conv-BN-ReLU layers; H and W must be multiples of 8.
template <typename T>
Var<T> stem(Graph<T>& graph, Var<T> image, const std::string& prefix,
            const std::array<int, 3>& ladder);

/// DW 3x3 stride 2 (BN-ReLU) then PW in->out (BN-ReLU). Output extent floor((H-1)/2)+1.
template <typename T>
Var<T> downsample(Graph<T>& graph, Var<T> x, const std::string& prefix);

}  // namespace lsnet
