#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "spslu/prng.hpp"
#include "spslu/tensor.hpp"

namespace spslu {

enum class ParamKind {
  kWeight,     // weight matrix: fan-in uniform init, L2 applies
  kBias,       // zero init (LSTM forget slice 1.0), no L2
  kEmbedding,  // uniform init, no L2
};

template <class T>
struct Param {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  Tensor<T> tensor;
};

/// Ordered, name-addressable set of trainable tensors. Declaration order is
/// the serialization order and the order the init stream is consumed in.
/// Elements have stable addresses.
template <class T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) {
      add(p->name, p->kind, p->tensor.shape) = p->tensor;
    }
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Tensor<T>& add(const std::string& name, ParamKind kind,
                 std::vector<std::size_t> shape) {
    if (index_.count(name)) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->kind = kind;
    p->tensor = Tensor<T>(std::move(shape));
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back()->tensor;
  }

  Tensor<T>& operator[](const std::string& name) { return get(name).tensor; }
  const Tensor<T>& operator[](const std::string& name) const {
    return get(name).tensor;
  }

  Param<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return *params_[it->second];
  }
  const Param<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return *params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }
  Param<T>& at(std::size_t i) { return *params_.at(i); }
  const Param<T>& at(std::size_t i) const { return *params_.at(i); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->tensor.zero_grad();
  }

  /// Copies values (not gradients) from a set with identical names/shapes,
  /// converting the scalar type.
  template <class U>
  void assign_values(const ParameterSet<U>& src) {
    if (src.size() != size()) throw std::invalid_argument("parameter count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      auto& dst = at(i);
      const auto& s = src.at(i);
      if (dst.name != s.name || dst.tensor.shape != s.tensor.shape) {
        throw std::invalid_argument("parameter layout mismatch at " + s.name);
      }
      for (std::size_t k = 0; k < s.tensor.size(); ++k)
        dst.tensor.data[k] = static_cast<T>(s.tensor.data[k]);
    }
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Weight matrices draw from U(-sqrt(1/fan_in), +sqrt(1/fan_in)) where
/// fan_in = rows; embeddings use the embedding width as fan-in; biases stay
/// zero. LSTM forget-gate slices are set by the layer that owns them.
template <class T>
void init_uniform_fan_in(ParameterSet<T>& params, Prng& init) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (p.kind == ParamKind::kBias) {
      std::fill(p.tensor.data.begin(), p.tensor.data.end(), T(0));
      continue;
    }
    const std::size_t fan_in =
        p.kind == ParamKind::kEmbedding ? p.tensor.cols() : p.tensor.rows();
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (T& v : p.tensor.data) v = static_cast<T>(init.uniform(-bound, bound));
  }
}

}  // namespace spslu
