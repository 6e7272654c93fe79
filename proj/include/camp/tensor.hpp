#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "camp/errors.hpp"

namespace camp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major tensor with optional gradient.
///
/// A Tensor is a shared handle: copies alias the same storage, the way
/// parameters are shared between a model, its optimizer and the tape.
/// Use clone() for an independent copy. Storage is always contiguous.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (shape.empty()) shape = {1};
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape.empty() ? Shape{1} : shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape.empty() ? Shape{1} : shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const { return node().shape.at(axis); }
  std::size_t numel() const { return node().data.size(); }
  /// Width of the innermost axis.
  std::size_t cols() const { return node().shape.back(); }
  /// Product of all axes except the innermost.
  std::size_t rows() const { return numel() / cols(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> data_mut() { return node().data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node().data[0];
  }
  T at(std::size_t r, std::size_t c) const { return node().data[r * cols() + c]; }

  bool requires_grad() const { return node().requires_grad; }
  /// Turning gradient tracking off also drops any existing grad buffer.
  void set_requires_grad(bool on) {
    node().requires_grad = on;
    if (!on) drop_grad();
  }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  // Grad buffers live on the shared node, so they are reachable through
  // const handles (backward closures hold const copies of their inputs).

  /// Grad buffer, allocated as zeros on first use.
  std::span<T> grad_mut() const {
    auto& n = node();
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    return n.grad;
  }
  void zero_grad() const {
    auto& g = node().grad;
    std::fill(g.begin(), g.end(), T(0));
  }
  void drop_grad() const {
    node().grad.clear();
    node().grad.shrink_to_fit();
  }

  /// Independent copy of shape and data; no grad, not tracked.
  Tensor clone() const { return Tensor(shape(), node().data, false); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  Node& node() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable ops executed while the tape is active.
///
/// Entries are appended in execution order, which is a topological order of
/// the computation graph; backward() replays them in reverse. Ops only record
/// when a tape is active on the calling thread and at least one input
/// requires grad.
template <typename T>
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  /// Activates a tape on this thread for the lifetime of the scope.
  class Scope {
   public:
    explicit Scope(GradTape& tape) : previous_(current()) { current() = &tape; }
    ~Scope() { current() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return current(); }

  void record(Tensor<T> output, BackwardFn fn) {
    entries_.push_back({std::move(output), std::move(fn)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Populates grads of every requires_grad tensor reachable from `loss`.
  /// Intermediate grads are reset first, so leaf grads accumulate across
  /// repeated calls. Returns the number of entries visited.
  std::size_t backward(Tensor<T> loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!std::isfinite(loss.item())) {
      throw NumericError("backward() on non-finite loss");
    }
    for (auto& e : entries_) {
      if (e.output.has_grad()) e.output.zero_grad();
    }
    if (!loss.requires_grad()) return 0;
    loss.grad_mut()[0] += T(1);
    std::size_t visited = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->fn();
      ++visited;
    }
    return visited;
  }

 private:
  struct Entry {
    Tensor<T> output;
    BackwardFn fn;
  };

  static GradTape*& current() {
    thread_local GradTape* tape = nullptr;
    return tape;
  }

  std::vector<Entry> entries_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace camp
