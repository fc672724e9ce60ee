#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lsnet/blocks.hpp"

namespace lsnet {

/// How a stage's blocks are composed.
///   alternating: even-indexed blocks carry DW+SE+FFN, odd-indexed blocks mixer+FFN
///                (used by the T/S/B variants);
///   full:        every block carries DW+SE+mixer+FFN.
enum class BlockLayout { alternating, full };

struct StageSpec {
  int channels = 0;
  int blocks = 0;
  MixerKind mixer = MixerKind::ls;
};

struct Ablation {
  bool no_dw = false;
  bool no_se = false;
  bool no_lkp_dw = false;
};

struct ModelSpec {
  std::string name = "custom";
  std::array<int, 3> stem{};
  std::array<StageSpec, 4> stages{};
  int classes = 1000;
  int large_kernel = 7;
  int small_kernel = 3;
  int group_width = 8;  // C / G
  int ffn_ratio = 2;
  int se_reduction = 4;
  int msa_heads = 4;
  int msa_key_dim = 16;
  BlockLayout layout = BlockLayout::alternating;
  Ablation ablation;

  void validate() const;
  /// Resolution divisor of stage s (0-based): 8, 16, 32, 64.
  static int resolution_divisor(int stage) { return 8 << stage; }
  BlockConfig block_config(int stage, int index) const;

  /// Versioned key-value text form; see README for the grammar.
  std::string to_text() const;
  static ModelSpec from_text(std::string_view text);
  static ModelSpec load(const std::filesystem::path& path);
  /// FNV-1a 64 over to_text().
  std::uint64_t digest() const;

  /// "t", "s", "b", "micro" or "nano".
  static ModelSpec builtin(std::string_view name);
};

/// Declares every model tensor in forward order.
ParamLayout model_layout(const ModelSpec& spec);

/// Deterministic initialization from seed.
template <typename T>
ParamStore<T> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Learnable scalars, BN affine terms included, running statistics excluded.
template <typename T>
std::uint64_t count_params(const ParamStore<T>& store);

struct MacEntry {
  std::string name;
  std::string kind;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  std::optional<LsConvMacs> ls;  // closed-form cross-check for LS-conv entries
};

struct MacReport {
  std::vector<MacEntry> entries;
  std::uint64_t total_macs = 0;
  std::uint64_t total_params = 0;
  int height = 0;
  int width = 0;

  /// FLOPs under the 2*MACs convention.
  std::uint64_t flops() const { return 2 * total_macs; }
  std::string table() const;
};

/// Symbolic walk of the model graph at H x W input.
MacReport count_macs(const ModelSpec& spec, int height, int width);

/// Published budget of a built-in ImageNet variant at 224 x 224.
struct PublishedBudget {
  double params = 0;  // learnable scalars
  double flops = 0;   // as published; unit convention unstated
  double tolerance = 0.10;

  bool params_ok(std::uint64_t measured) const;
  /// Accepts measured MACs under either the MAC or the 2*MAC convention.
  bool flops_ok(std::uint64_t macs) const;
};

/// Budgets for "t", "s" and "b"; empty for other names.
std::optional<PublishedBudget> published_budget(std::string_view name);

template <typename T>
struct ModelOutputs {
  Var<T> stem;
  std::vector<Var<T>> stages;  // one per stage, stage order
  Var<T> logits;               // (N, classes, 1, 1)
};

template <typename T>
ModelOutputs<T> run_model(Graph<T>& graph, Var<T> image, const ModelSpec& spec);

/// Infer-mode logits (N, classes, 1, 1). Store is not modified.
template <typename T>
Tensor<T> forward_classify(const ParamStore<T>& store, const ModelSpec& spec, const Tensor<T>& images);

/// Weight file: "LSW1", version, spec digest, tensor directory, little-endian blobs.
template <typename T>
void save_weights(const ParamStore<T>& store, const ModelSpec& spec, const std::filesystem::path& path);

/// Throws FormatError on malformed/truncated files and IncompatibleError when
/// the file was written for a different spec. Nothing is returned on failure.
template <typename T>
ParamStore<T> load_weights(const std::filesystem::path& path, const ModelSpec& spec);

struct WeightDirEntry {
  std::string name;
  Shape shape;
  std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
  bool learnable = true;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

struct WeightFileInfo {
  std::uint32_t version = 0;
  std::uint64_t digest = 0;
  std::uint64_t file_size = 0;
  std::vector<WeightDirEntry> directory;
};

/// Parses and validates the header and directory only.
WeightFileInfo inspect_weights(const std::filesystem::path& path);

}  // namespace lsnet
