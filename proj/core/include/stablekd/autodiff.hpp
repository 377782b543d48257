#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stablekd/tensor.hpp"

namespace skd {

template <typename T>
struct Parameter {
  std::string id;
  Tensor<T> value;
  bool trainable = true;
};

/// Gradients keyed by parameter id.
template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t index_ = 0;
};

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  AddRowBias,
  AddChannelBias,
  Conv2d,
  Relu,
  AvgPool2d,
  Reshape,
  Sum,
  Scale,
  Mul,
  CrossEntropy,
  KlDivergence,
  Mse,
};

const char* op_name(OpKind kind) noexcept;

/// Single-writer record of a forward computation. Nodes are appended in
/// execution order, so index order is a topological order and backward()
/// walks it in reverse, visiting every node once.
template <typename T>
class Tape {
 public:
  /// Receives the upstream gradient of the node it is attached to and
  /// accumulates into the node's parents through accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf bound to a parameter. Frozen parameters become constants and
  /// never receive gradient.
  Var<T> parameter(const Parameter<T>& param);

  Var<T> record(Tensor<T> value, OpKind kind, std::vector<std::size_t> parents,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t index) const { return nodes_.at(index).value; }
  bool requires_grad(std::size_t index) const { return nodes_.at(index).requires_grad; }
  OpKind kind(std::size_t index) const { return nodes_.at(index).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds `delta` into the gradient of node `index` (no-op for constants).
  void accumulate(std::size_t index, const Tensor<T>& delta);
  /// Gradient buffer for node `index`, zero-initialized on first access;
  /// nullptr when the node does not require gradient.
  Tensor<T>* grad_buffer(std::size_t index);

  /// Reverse pass from a scalar loss. Every trainable parameter registered
  /// on this tape gets an entry; unreached ones map to zeros.
  GradientMap<T> backward(Var<T> loss);

  /// Gradient of node `index` after backward(); zeros when unreached.
  Tensor<T> grad(std::size_t index) const;

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> parents;
    OpKind kind = OpKind::Leaf;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> param_leaves_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(index_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(index_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace skd
