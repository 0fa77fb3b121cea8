#pragma once

// Named parameter registry. Ordering is creation order and is part of the
// contract: optimizer state, checkpoints, and tape binding all rely on it.

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "s2ml/autodiff.hpp"
#include "s2ml/tensor.hpp"

namespace s2ml {

template <typename T>
class ParamStore {
 public:
  int add(std::string name, Tensor<T> v) {
    check(index_.find(name) == index_.end(), "ParamStore: duplicate parameter " + name);
    const int id = static_cast<int>(values_.size());
    index_.emplace(name, id);
    names_.push_back(std::move(name));
    values_.push_back(std::move(v));
    return id;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  int id(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamStore: unknown parameter " + name);
    return it->second;
  }

  Tensor<T>& at(const std::string& name) { return values_[static_cast<std::size_t>(id(name))]; }
  const Tensor<T>& at(const std::string& name) const {
    return values_[static_cast<std::size_t>(id(name))];
  }

  int count() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  Tensor<T>& value(int i) { return values_[static_cast<std::size_t>(i)]; }
  const Tensor<T>& value(int i) const { return values_[static_cast<std::size_t>(i)]; }

  long total_params() const {
    long n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.all_finite()) return false;
    return true;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (int i = 0; i < count(); ++i) out.add(name(i), value(i).template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, int> index_;
};

// parameters pushed onto a tape as requires-grad leaves, index-aligned with
// the store
template <typename T>
struct BoundParams {
  std::vector<Val> vals;

  Val operator[](int id) const { return vals[static_cast<std::size_t>(id)]; }
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& t, const ParamStore<T>& store) {
  BoundParams<T> b;
  b.vals.reserve(static_cast<std::size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) b.vals.push_back(t.leaf(store.value(i), true));
  return b;
}

}  // namespace s2ml
