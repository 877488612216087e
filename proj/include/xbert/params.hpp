#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xbert/rng.hpp"
#include "xbert/tensor.hpp"

namespace xbert {

// Ordered registry of named parameter tensors. Insertion order is the
// canonical order for the optimizer and for checkpoint serialization, so
// identical construction code yields identical layouts.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (find(name) != nullptr) throw std::runtime_error("ParamStore: duplicate name '" + name + "'");
    items_.emplace_back(name, t);
    return t;
  }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : items_) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  size_t size() const { return items_.size(); }
  const std::pair<std::string, Tensor>& at(size_t i) const { return items_[i]; }
  std::pair<std::string, Tensor>& at(size_t i) { return items_[i]; }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grads() {
    for (auto& [n, t] : items_) t.zero_grad();
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Gaussian init, the BERT-style sigma=0.02 default unless stated.
inline Tensor param_normal(ParamStore& store, const std::string& name, Shape shape, Rng& rng,
                           float sigma = 0.02f) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = rng.normal_float(0.0f, sigma);
  return store.add(name, t);
}

inline Tensor param_zeros(ParamStore& store, const std::string& name, Shape shape) {
  return store.add(name, Tensor::zeros(std::move(shape), true));
}

inline Tensor param_ones(ParamStore& store, const std::string& name, Shape shape) {
  Tensor t = Tensor::full(std::move(shape), 1.0f);
  t.set_requires_grad(true);
  return store.add(name, t);
}

// Strip the leading "<prefix>." segment; used to pair "model.x.y" with
// "momentum.x.y" when syncing momentum copies.
inline std::string name_suffix(const std::string& name) {
  const auto pos = name.find('.');
  return pos == std::string::npos ? name : name.substr(pos + 1);
}

inline void copy_values(const ParamStore& src, ParamStore& dst) {
  if (src.size() != dst.size()) throw std::runtime_error("copy_values: store size mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    const auto& [sn, st] = src.at(i);
    auto& [dn, dt] = dst.at(i);
    if (name_suffix(sn) != name_suffix(dn) || st.shape() != dt.shape()) {
      throw std::runtime_error("copy_values: mismatch at '" + sn + "' vs '" + dn + "'");
    }
    dt.values() = st.values();
  }
}

}  // namespace xbert
