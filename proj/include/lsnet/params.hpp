#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsnet/tensor.hpp"

namespace lsnet {

enum class Init { normal, zeros, ones };

/// One named tensor a model needs, with its shape and initializer.
struct ParamDecl {
  std::string name;
  Shape shape;
  Init init = Init::normal;
  bool learnable = true;
};

/// Ordered list of parameter declarations. Naming scheme:
///   <prefix>.weight / <prefix>.bias for convolutions,
///   <prefix>.bn.{scale,shift,running_mean,running_var} for batch norm.
class ParamLayout {
 public:
  void add(ParamDecl decl);
  void conv(const std::string& prefix, int out_ch, int in_ch, int kernel, int groups, bool bias);
  void bn(const std::string& prefix, int channels);
  /// Convolution without bias followed by batch norm.
  void conv_bn(const std::string& prefix, int out_ch, int in_ch, int kernel, int groups);

  const std::vector<ParamDecl>& decls() const { return decls_; }

 private:
  std::vector<ParamDecl> decls_;
};

/// Named map of model tensors: learnable parameters plus non-learnable
/// buffers (batch-norm running statistics).
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    bool learnable = true;
  };

  void insert(const std::string& name, Tensor<T> value, bool learnable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get_mut(const std::string& name);
  bool learnable(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  /// Number of learnable scalars.
  std::size_t learnable_count() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : entries_) out.insert(name, e.value.template cast<U>(), e.learnable);
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [name, e] : a.entries_) {
      auto it = b.entries_.find(name);
      if (it == b.entries_.end() || it->second.learnable != e.learnable ||
          !(it->second.value.shape() == e.value.shape()) || it->second.value.vec() != e.value.vec()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::map<std::string, Entry> entries_;
};

/// Instantiates every declaration. Weights ~ Normal(0, 0.02) truncated at 2 sigma,
/// drawn in declaration order from a seeded mt19937_64.
template <typename T>
ParamStore<T> initialize(const ParamLayout& layout, std::uint64_t seed);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace lsnet
