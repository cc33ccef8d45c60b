#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spslu/errors.hpp"

namespace spslu {

/// Dense row-major array. Rank-1 tensors act as a 1 x n row when used as a
/// matrix; higher ranks flatten everything after the first dimension.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(count(shape), T(0)) {}
  Tensor(std::vector<std::size_t> s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != count(shape)) {
      throw ShapeError("tensor data length does not match its shape");
    }
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() <= 1 ? 1 : shape[0]; }
  std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

  void zero_grad() { grad.assign(data.size(), T(0)); }

  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

template <class T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  explicit operator bool() const { return tape != nullptr && id >= 0; }
  std::size_t rows() const { return tape->rows(id); }
  std::size_t cols() const { return tape->cols(id); }
  std::span<const T> value() const { return tape->value(id); }
  T item() const { return tape->value(id)[0]; }
};

/// Reverse-mode tape. Nodes are appended in execution order, so inputs always
/// precede the node that consumes them. Gradient buffers are allocated
/// lazily during `backward`. A tape records one forward pass and supports one
/// backward pass.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(std::size_t rows, std::size_t cols, std::vector<T> values,
                  std::string_view name = "constant") {
    if (values.size() != rows * cols) {
      throw ShapeError("constant: data length does not match shape");
    }
    return push(name, rows, cols, std::move(values), {}, nullptr);
  }

  Var<T> zeros(std::size_t rows, std::size_t cols) {
    return constant(rows, cols, std::vector<T>(rows * cols, T(0)), "zeros");
  }

  /// Leaf bound to an external tensor. Gradients accumulate into `p.grad`,
  /// which must outlive the tape. A tape without gradients never writes to
  /// `p`, so frozen parameters can be shared across threads.
  Var<T> param(Tensor<T>& p) {
    if (grad_enabled_ && p.grad.size() != p.data.size()) p.zero_grad();
    Node n;
    n.op = "param";
    n.rows = p.rows();
    n.cols = p.cols();
    n.ext_value = p.data.data();
    n.ext_grad = grad_enabled_ ? p.grad.data() : nullptr;
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Records a node. `inputs` decides whether the node needs a gradient;
  /// `fn` is dropped when it does not.
  Var<T> push(std::string_view op, std::size_t rows, std::size_t cols,
              std::vector<T> value, std::initializer_list<int> inputs,
              BackwardFn fn) {
    return push_impl(op, rows, cols, std::move(value),
                     std::vector<int>(inputs), std::move(fn));
  }

  Var<T> push(std::string_view op, std::size_t rows, std::size_t cols,
              std::vector<T> value, const std::vector<int>& inputs,
              BackwardFn fn) {
    return push_impl(op, rows, cols, std::move(value), inputs, std::move(fn));
  }

  std::size_t rows(int id) const { return nodes_.at(id).rows; }
  std::size_t cols(int id) const { return nodes_.at(id).cols; }
  std::string_view op(int id) const { return nodes_.at(id).op; }

  std::span<const T> value(int id) const {
    const Node& n = nodes_.at(id);
    if (n.ext_value) return {n.ext_value, n.rows * n.cols};
    return n.value;
  }

  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<T> grad(int id) {
    Node& n = nodes_.at(id);
    if (n.ext_grad) return {n.ext_grad, n.rows * n.cols};
    if (n.grad.empty()) n.grad.assign(n.rows * n.cols, T(0));
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (!loss || loss.tape != this) {
      throw std::logic_error("backward: loss does not belong to this tape");
    }
    if (backward_done_) {
      throw std::logic_error("backward: tape already consumed");
    }
    if (!grad_enabled_) {
      throw std::logic_error("backward: tape was recorded without gradients");
    }
    if (rows(loss.id) * cols(loss.id) != 1) {
      throw ShapeError("backward: loss must be a scalar");
    }
    backward_done_ = true;
    grad(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      if (n.grad.empty()) continue;  // never reached from the loss
      n.backward(*this, id);
    }
  }

 private:
  struct Node {
    std::string_view op;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
    const T* ext_value = nullptr;
    T* ext_grad = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push_impl(std::string_view op, std::size_t rows, std::size_t cols,
                   std::vector<T> value, const std::vector<int>& inputs,
                   BackwardFn fn) {
    if (value.size() != rows * cols) {
      throw ShapeError(std::string(op) + ": output length does not match shape");
    }
    if (!all_finite<T>(value)) {
      throw NumericError("non-finite value in output of '" + std::string(op) +
                         "' (node " + std::to_string(nodes_.size()) + ")");
    }
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    if (grad_enabled_) {
      for (int in : inputs) {
        if (nodes_.at(in).requires_grad) n.requires_grad = true;
      }
      if (n.requires_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

}  // namespace spslu
