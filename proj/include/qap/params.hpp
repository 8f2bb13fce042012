#pragma once

#include <cstring>
#include <map>
#include <stdexcept>
#include <string>

#include "qap/rng.hpp"
#include "qap/tape.hpp"

namespace qap {

class param_error : public std::runtime_error {
 public:
  explicit param_error(const std::string& what) : std::runtime_error(what) {}
};

// Named trainable tensors. The frozen LM's tensors never live here; the
// trainer only ever updates what this store holds.
template <class S>
class ParameterStore {
 public:
  Mat<S>& add(const std::string& name, Mat<S> value) {
    auto [it, inserted] = params_.emplace(name, std::move(value));
    if (!inserted) throw param_error("parameter registered twice: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Mat<S>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw param_error("unknown parameter: " + name);
    return it->second;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw param_error("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Mat<S>>& all() { return params_; }
  const std::map<std::string, Mat<S>>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }

  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, m] : params_) {
      h ^= fnv1a(name);
      h *= 1099511628211ull;
      const unsigned char* bytes = reinterpret_cast<const unsigned char*>(m.data());
      for (std::size_t i = 0; i < sizeof(S) * static_cast<std::size_t>(m.size()); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

  template <class T>
  ParameterStore<T> cast() const {
    ParameterStore<T> out;
    for (const auto& [name, m] : params_) out.add(name, m.template cast<T>());
    return out;
  }

  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;

 private:
  std::map<std::string, Mat<S>> params_;
};

// Leaves for every parameter on one tape. Gradient-carrying when trainable.
template <class S>
struct BoundParams {
  std::map<std::string, TensorRef> refs;

  TensorRef at(const std::string& name) const {
    auto it = refs.find(name);
    if (it == refs.end()) throw param_error("parameter not bound: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return refs.count(name) != 0; }
};

template <class S>
BoundParams<S> bind(Tape<S>& tape, const ParameterStore<S>& store, bool trainable) {
  BoundParams<S> bound;
  for (const auto& [name, m] : store.all()) bound.refs.emplace(name, tape.leaf(m, trainable));
  return bound;
}

}  // namespace qap
