#include "lsnet/layers.hpp"

namespace lsnet {

template <typename T>
BnParams<T> BnParams<T>::identity(int channels) {
  const Shape s{1, channels, 1, 1};
  return {Tensor<T>(s, T{1}), Tensor<T>(s), Tensor<T>(s), Tensor<T>(s, T{1})};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  return conv2d_forward(input, params.kernel, params.bias ? &*params.bias : nullptr, params.geom);
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BnParams<T>& bn, Mode mode) {
  Tape<T> tape(false);
  Var<T> x = tape.constant(input);
  Var<T> y = batch_norm(x, tape.constant(bn.scale), tape.constant(bn.shift),
                        RunningStats<T>{&bn.running_mean, &bn.running_var}, mode);
  return y.value();
}

template <typename T>
Var<T> Graph<T>::param(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const Tensor<T>& value = store_.get(name);
  Var<T> v = store_.learnable(name) ? tape_.leaf(name, value) : tape_.constant(value);
  leaves_.emplace(name, v);
  return v;
}

template <typename T>
RunningStats<T> Graph<T>::running(const std::string& prefix) {
  return {&store_.get_mut(prefix + ".bn.running_mean"), &store_.get_mut(prefix + ".bn.running_var")};
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> image, bool differentiable) {
  return differentiable ? tape_.leaf("input", std::move(image)) : tape_.constant(std::move(image));
}

template <typename T>
Var<T> Graph<T>::conv(Var<T> x, const std::string& prefix, ConvGeom geom) {
  std::optional<Var<T>> bias;
  if (store_.contains(prefix + ".bias")) bias = param(prefix + ".bias");
  return conv2d(x, param(prefix + ".weight"), bias, geom);
}

template <typename T>
Var<T> Graph<T>::bn(Var<T> x, const std::string& prefix) {
  return batch_norm(x, param(prefix + ".bn.scale"), param(prefix + ".bn.shift"), running(prefix),
                    mode_);
}

template <typename T>
Var<T> Graph<T>::conv_bn(Var<T> x, const std::string& prefix, ConvGeom geom, bool relu_after) {
  Var<T> y = bn(conv(x, prefix, geom), prefix);
  return relu_after ? relu(y) : y;
}

template <typename T>
void store_conv(ParamStore<T>& store, const std::string& prefix, const ConvParams<T>& p) {
  store.insert(prefix + ".weight", p.kernel);
  if (p.bias) {
    store.insert(prefix + ".bias", p.bias->reshaped({1, p.kernel.shape().n, 1, 1}));
  }
}

template <typename T>
void store_bn(ParamStore<T>& store, const std::string& prefix, const BnParams<T>& p) {
  store.insert(prefix + ".bn.scale", p.scale);
  store.insert(prefix + ".bn.shift", p.shift);
  store.insert(prefix + ".bn.running_mean", p.running_mean, false);
  store.insert(prefix + ".bn.running_var", p.running_var, false);
}

#define LSNET_INSTANTIATE(T)                                                           \
  template struct BnParams<T>;                                                         \
  template class Graph<T>;                                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvParams<T>&);                   \
  template Tensor<T> batch_norm(const Tensor<T>&, BnParams<T>&, Mode);                 \
  template void store_conv(ParamStore<T>&, const std::string&, const ConvParams<T>&);  \
  template void store_bn(ParamStore<T>&, const std::string&, const BnParams<T>&);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

}  // namespace lsnet
