#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "lsnet/ops.hpp"
#include "lsnet/params.hpp"

namespace lsnet {

/// Static convolution parameters: kernel (C_out, C_in/groups, k_h, k_w), optional bias.
template <typename T>
struct ConvParams {
  Tensor<T> kernel;
  std::optional<Tensor<T>> bias;
  ConvGeom geom;
};

template <typename T>
struct BnParams {
  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  /// scale 1, shift 0, running statistics (0, 1).
  static BnParams identity(int channels);
};

/// Tensor-in/tensor-out convolution.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

/// Tensor-in/tensor-out batch norm. Train mode updates bn's running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BnParams<T>& bn, Mode mode);

/// Forward-graph context: resolves parameter names in a store to tape leaves
/// (one leaf per name) and carries the norm mode.
template <typename T>
class Graph {
 public:
  Graph(Tape<T>& tape, ParamStore<T>& store, Mode mode) : tape_(tape), store_(store), mode_(mode) {}

  Tape<T>& tape() { return tape_; }
  ParamStore<T>& store() { return store_; }
  Mode mode() const { return mode_; }

  Var<T> param(const std::string& name);
  RunningStats<T> running(const std::string& prefix);

  Var<T> input(Tensor<T> image, bool differentiable = false);

  /// Convolution reading <prefix>.weight (and <prefix>.bias when present in the store).
  Var<T> conv(Var<T> x, const std::string& prefix, ConvGeom geom);
  Var<T> bn(Var<T> x, const std::string& prefix);
  /// conv -> batch norm -> optional ReLU.
  Var<T> conv_bn(Var<T> x, const std::string& prefix, ConvGeom geom, bool relu_after);

  /// Observes or replaces the LS-conv weight maps produced under `prefix`.
  using WeightHook = std::function<Var<T>(const std::string& prefix, Var<T> weights)>;
  void set_weight_hook(WeightHook hook) { weight_hook_ = std::move(hook); }
  Var<T> weight_map(const std::string& prefix, Var<T> weights) {
    return weight_hook_ ? weight_hook_(prefix, weights) : weights;
  }

 private:
  Tape<T>& tape_;
  ParamStore<T>& store_;
  Mode mode_;
  std::map<std::string, Var<T>> leaves_;
  WeightHook weight_hook_;
};

/// Copies ConvParams / BnParams into a store under the layer naming scheme.
template <typename T>
void store_conv(ParamStore<T>& store, const std::string& prefix, const ConvParams<T>& p);
template <typename T>
void store_bn(ParamStore<T>& store, const std::string& prefix, const BnParams<T>& p);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace lsnet
