// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "focalfuse/tensor/errors.hpp"

namespace focalfuse {

using Index = std::int64_t;

/// Extents of a dense row-major tensor. 5-D activations are laid out as
/// (batch, channel, W, H, Z) with Z varying fastest.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) { validate(); }

  [[nodiscard]] std::size_t rank() const { return dims_.size(); }
  [[nodiscard]] Index operator[](std::size_t i) const { return dims_.at(i); }
  [[nodiscard]] const std::vector<Index>& dims() const { return dims_; }

  [[nodiscard]] Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>{});
  }

  /// Product of the trailing spatial extents of a 5-D shape.
  [[nodiscard]] Index spatial_numel() const {
    require_rank(5, "spatial_numel");
    return dims_[2] * dims_[3] * dims_[4];
  }

  [[nodiscard]] std::array<Index, 3> spatial() const {
    require_rank(5, "spatial");
    return {dims_[2], dims_[3], dims_[4]};
  }

  void require_rank(std::size_t r, const char* where) const {
    if (rank() != r) {
      throw DimensionError(std::string(where) + ": expected rank " + std::to_string(r) +
                           ", got shape " + to_string());
    }
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const {
    for (Index d : dims_) {
      if (d < 1) throw DimensionError("shape extents must be >= 1, got " + to_string());
    }
  }

  std::vector<Index> dims_;
};

inline Shape make_shape5(Index b, Index c, const std::array<Index, 3>& s) {
  return Shape{b, c, s[0], s[1], s[2]};
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

/// Handle to a dense tensor. Copies share storage; operations never mutate
/// their inputs and always produce fresh tensors.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<Node>()) {
    node_->value.assign(static_cast<std::size_t>(shape.numel()), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    if (static_cast<Index>(values.size()) != shape.numel()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape.to_string());
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node().shape; }
  [[nodiscard]] Index numel() const { return static_cast<Index>(node().value.size()); }
  [[nodiscard]] Index dim(std::size_t i) const { return shape()[i]; }

  [[nodiscard]] std::span<const T> data() const { return node().value; }
  /// Mutable access for leaves (parameters, inputs being built).
  [[nodiscard]] std::span<T> mutable_data() { return node().value; }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape().to_string());
    return node().value[0];
  }

  [[nodiscard]] T at(Index b, Index c, Index w, Index h, Index z) const {
    return node().value[static_cast<std::size_t>(offset5(b, c, w, h, z))];
  }
  T& at(Index b, Index c, Index w, Index h, Index z) {
    return node().value[static_cast<std::size_t>(offset5(b, c, w, h, z))];
  }

  [[nodiscard]] bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node().requires_grad = on;
    return *this;
  }

  [[nodiscard]] bool has_grad() const { return !node().grad.empty(); }
  /// Gradient accumulated by backward passes; zeros if none reached this tensor.
  [[nodiscard]] std::vector<T> grad() const {
    if (node().grad.empty()) return std::vector<T>(node().value.size(), T{0});
    return node().grad;
  }
  void zero_grad() { node().grad.clear(); }

  /// Copy with fresh storage, detached from any tape.
  [[nodiscard]] Tensor clone() const { return Tensor(shape(), node().value); }

  [[nodiscard]] bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  [[nodiscard]] const std::shared_ptr<Node>& node_ptr() const { return node_; }
  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  Node& node() const {
    if (!node_) throw DimensionError("use of an undefined tensor");
    return *node_;
  }

  Index offset5(Index b, Index c, Index w, Index h, Index z) const {
    const auto& d = node().shape.dims();
    return (((b * d[1] + c) * d[2] + w) * d[3] + h) * d[4] + z;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

}  // namespace detail

/// Ordered record of executed primitives. Replaying it in reverse visits each
/// primitive after all of its consumers.
template <class T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  /// Receives the output gradient and accumulates into the inputs.
  using BackwardFn = std::function<void(std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    if (active_slot() == this) active_slot() = nullptr;
  }

  /// Makes a tape the recording target for the current thread while alive.
  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(active_slot()) { active_slot() = &tape; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { active_slot() = previous_; }

   private:
    Tape* previous_;
  };

  static Tape* active() { return active_slot(); }

  void record(const char* op, NodePtr output, BackwardFn fn) {
    output->leaf = false;
    output->requires_grad = true;
    records_.push_back(Record{op, std::move(output), std::move(fn)});
  }

  [[nodiscard]] std::size_t size() const { return records_.size(); }

  void backward(const Tensor<T>& loss) {
    if (consumed_) throw TapeError("backward called twice on the same tape without reset()");
    if (!loss.defined() || loss.numel() != 1) {
      throw TapeError("backward requires a scalar loss, got shape " +
                      (loss.defined() ? loss.shape().to_string() : std::string("undefined")));
    }
    const auto& loss_node = loss.node_ptr();
    std::size_t end = records_.size();
    bool found = false;
    for (std::size_t i = records_.size(); i-- > 0;) {
      if (records_[i].output == loss_node) {
        end = i + 1;
        found = true;
        break;
      }
    }
    if (!found && !(loss_node->leaf && loss_node->requires_grad)) {
      throw TapeError("loss tensor was not produced on this tape");
    }
    consumed_ = true;
    loss_node->grad_buffer()[0] += T{1};
    if (!found) return;
    for (std::size_t i = end; i-- > 0;) {
      Record& r = records_[i];
      if (r.output->grad.empty()) continue;
      r.backward(r.output->grad);
      std::vector<T>().swap(r.output->grad);
    }
  }

  void reset() {
    records_.clear();
    consumed_ = false;
  }

 private:
  struct Record {
    const char* op;
    NodePtr output;
    BackwardFn backward;
  };

  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }

  std::vector<Record> records_;
  bool consumed_ = false;
};

namespace detail {

/// Tape that should record an op on `inputs`, or nullptr when no input needs
/// gradients or no tape is active.
template <class T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <class T>
Tape<T>* recording_tape(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

/// Gradient buffer of `t` if it participates in differentiation, else empty.
template <class T>
std::span<T> grad_target(const std::shared_ptr<TensorNode<T>>& n) {
  if (!n || !n->requires_grad) return {};
  return n->grad_buffer();
}

}  // namespace detail
}  // namespace focalfuse
