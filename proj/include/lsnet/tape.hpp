#pragma once

// Reverse-mode differentiation tape. Every recorded op stores its forward
// value and a closure that turns the output gradient into parent gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lsnet/tensor.hpp"

namespace lsnet {

template <typename T>
class Tape;

/// Handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

/// Gradients keyed by leaf name, as returned by Tape::backward.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& at(const std::string& leaf) const;
  bool contains(const std::string& leaf) const { return grads_.count(leaf) != 0; }
  const std::map<std::string, Tensor<T>>& all() const { return grads_; }
  void set(const std::string& leaf, Tensor<T> g) { grads_[leaf] = std::move(g); }

 private:
  std::map<std::string, Tensor<T>> grads_;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  /// A non-recording tape keeps forward values but drops backward closures.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Named differentiable input (parameter or image).
  Var<T> leaf(const std::string& name, Tensor<T> value);
  Var<T> constant(Tensor<T> value);

  /// Appends an op result. `parents` decide whether the node needs a gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<std::size_t> parents,
                Backward backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  /// Adds g into the gradient slot of node id (no-op for constants).
  void accumulate(std::size_t id, const Tensor<T>& g);
  void accumulate(std::size_t id, Tensor<T>&& g);

  /// Replays the tape from `out` seeded with `seed`; returns one gradient per leaf,
  /// shape-equal to the leaf. Leaves the output does not depend on get zeros.
  Gradients<T> backward(Var<T> out, const Tensor<T>& seed);

  /// Ops recorded while a scope is alive carry its label (used for fault injection
  /// and per-op-kind reporting).
  class Scope {
   public:
    Scope(Tape& tape, std::string label) : tape_(tape), saved_(tape.scope_) {
      tape_.scope_ = std::move(label);
    }
    ~Scope() { tape_.scope_ = saved_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
    std::string saved_;
  };
  Scope scope(std::string label) { return Scope(*this, std::move(label)); }
  const std::string& current_scope() const { return scope_; }

  /// Test hook: scales every gradient contribution emitted by ops of `scope`.
  void inject_fault(std::string scope, T factor) {
    fault_scope_ = std::move(scope);
    fault_factor_ = factor;
  }

  /// Multiply-accumulate counter fed by conv2d, ska and matmul ops.
  void add_macs(std::uint64_t macs) { macs_ += macs; }
  std::uint64_t macs() const { return macs_; }

  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes recorded for op name `op`.
  std::size_t count(std::string_view op) const;
  /// Leaf names in creation order.
  std::vector<std::string> leaf_names() const;
  const std::string& op_of(std::size_t id) const { return nodes_.at(id).op; }
  const std::string& scope_of(std::size_t id) const { return nodes_.at(id).scope; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    std::string op;
    std::string scope;
    std::string leaf_name;
    bool needs_grad = false;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::string scope_;
  std::string fault_scope_;
  T fault_factor_{1};
  std::size_t active_ = static_cast<std::size_t>(-1);
  std::uint64_t macs_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lsnet
