#include "lsnet/tape.hpp"

namespace lsnet {

template <typename T>
const Tensor<T>& Gradients<T>::at(const std::string& leaf) const {
  auto it = grads_.find(leaf);
  if (it == grads_.end()) throw LookupError("no gradient for leaf '" + leaf + "'");
  return it->second;
}

template <typename T>
Var<T> Tape<T>::leaf(const std::string& name, Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.op = "leaf";
  node.scope = scope_;
  node.leaf_name = name;
  node.needs_grad = recording_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  node.scope = scope_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value,
                       std::initializer_list<std::size_t> parents, Backward backward) {
  check_finite(value, op);
  Node node;
  node.value = std::move(value);
  node.op = std::string(op);
  node.scope = scope_;
  if (recording_) {
    for (std::size_t p : parents) node.needs_grad = node.needs_grad || nodes_.at(p).needs_grad;
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& g) {
  Node& node = nodes_.at(id);
  if (!node.needs_grad) return;
  require_same_shape(node.value.shape(), g.shape(), "gradient accumulation");
  const bool faulty = active_ < nodes_.size() && !fault_scope_.empty() &&
                      nodes_[active_].scope == fault_scope_;
  if (node.grad.empty()) {
    node.grad = g;
    if (faulty) node.grad *= fault_factor_;
    return;
  }
  if (faulty) {
    Tensor<T> scaled = g;
    scaled *= fault_factor_;
    node.grad += scaled;
  } else {
    node.grad += g;
  }
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, Tensor<T>&& g) {
  Node& node = nodes_.at(id);
  if (!node.needs_grad) return;
  if (node.grad.empty()) {
    require_same_shape(node.value.shape(), g.shape(), "gradient accumulation");
    const bool faulty = active_ < nodes_.size() && !fault_scope_.empty() &&
                        nodes_[active_].scope == fault_scope_;
    node.grad = std::move(g);
    if (faulty) node.grad *= fault_factor_;
    return;
  }
  accumulate(id, static_cast<const Tensor<T>&>(g));
}

template <typename T>
Gradients<T> Tape<T>::backward(Var<T> out, const Tensor<T>& seed) {
  if (nodes_.empty()) throw ConfigError("backward on an empty tape");
  if (!recording_) throw ConfigError("backward on a non-recording tape");
  if (out.tape != this) throw ConfigError("backward: output belongs to another tape");
  require_same_shape(nodes_.at(out.id).value.shape(), seed.shape(), "backward seed");
  for (Node& n : nodes_) n.grad = Tensor<T>();
  active_ = static_cast<std::size_t>(-1);
  accumulate(out.id, seed);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    active_ = i;
    const Tensor<T> g = std::move(node.grad);
    node.grad = Tensor<T>();
    node.backward(*this, g);
  }
  active_ = static_cast<std::size_t>(-1);
  Gradients<T> result;
  for (Node& node : nodes_) {
    if (node.leaf_name.empty()) continue;
    if (node.grad.empty()) {
      result.set(node.leaf_name, Tensor<T>(node.value.shape()));
    } else {
      result.set(node.leaf_name, node.grad);
    }
  }
  return result;
}

template <typename T>
std::size_t Tape<T>::count(std::string_view op) const {
  std::size_t k = 0;
  for (const Node& n : nodes_) k += (n.op == op) ? 1 : 0;
  return k;
}

template <typename T>
std::vector<std::string> Tape<T>::leaf_names() const {
  std::vector<std::string> names;
  for (const Node& n : nodes_) {
    if (!n.leaf_name.empty()) names.push_back(n.leaf_name);
  }
  return names;
}

template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace lsnet
