#include "lsnet/params.hpp"

#include <random>

namespace lsnet {

void ParamLayout::add(ParamDecl decl) {
  for (const auto& d : decls_) {
    if (d.name == decl.name) throw ConfigError("duplicate parameter name " + decl.name);
  }
  decls_.push_back(std::move(decl));
}

void ParamLayout::conv(const std::string& prefix, int out_ch, int in_ch, int kernel, int groups,
                       bool bias) {
  if (groups <= 0 || in_ch % groups != 0 || out_ch % groups != 0) {
    throw ConfigError(prefix + ": groups must divide channels");
  }
  add({prefix + ".weight", {out_ch, in_ch / groups, kernel, kernel}, Init::normal, true});
  if (bias) add({prefix + ".bias", {1, out_ch, 1, 1}, Init::zeros, true});
}

void ParamLayout::bn(const std::string& prefix, int channels) {
  const Shape s{1, channels, 1, 1};
  add({prefix + ".bn.scale", s, Init::ones, true});
  add({prefix + ".bn.shift", s, Init::zeros, true});
  add({prefix + ".bn.running_mean", s, Init::zeros, false});
  add({prefix + ".bn.running_var", s, Init::ones, false});
}

void ParamLayout::conv_bn(const std::string& prefix, int out_ch, int in_ch, int kernel,
                          int groups) {
  conv(prefix, out_ch, in_ch, kernel, groups, false);
  bn(prefix, out_ch);
}

template <typename T>
void ParamStore<T>::insert(const std::string& name, Tensor<T> value, bool learnable) {
  entries_[name] = Entry{std::move(value), learnable};
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw LookupError("parameter '" + name + "' not in store");
  return it->second.value;
}

template <typename T>
Tensor<T>& ParamStore<T>::get_mut(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw LookupError("parameter '" + name + "' not in store");
  return it->second.value;
}

template <typename T>
bool ParamStore<T>::learnable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw LookupError("parameter '" + name + "' not in store");
  return it->second.learnable;
}

template <typename T>
std::size_t ParamStore<T>::learnable_count() const {
  std::size_t total = 0;
  for (const auto& [name, e] : entries_) {
    if (e.learnable) total += e.value.size();
  }
  return total;
}

template <typename T>
ParamStore<T> initialize(const ParamLayout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  ParamStore<T> store;
  for (const auto& d : layout.decls()) {
    Tensor<T> t(d.shape);
    switch (d.init) {
      case Init::zeros:
        break;
      case Init::ones:
        t.fill(T{1});
        break;
      case Init::normal:
        for (auto& v : t.data()) {
          double draw = normal(rng);
          while (std::abs(draw) > 0.04) draw = normal(rng);
          v = static_cast<T>(draw);
        }
        break;
    }
    store.insert(d.name, std::move(t), d.learnable);
  }
  return store;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<float> initialize(const ParamLayout&, std::uint64_t);
template ParamStore<double> initialize(const ParamLayout&, std::uint64_t);

}  // namespace lsnet
