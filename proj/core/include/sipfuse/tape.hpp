#pragma once

#include "sipfuse/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace sipfuse {

/// Handle to a value recorded on a Tape.
struct Var {
  std::int32_t id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices.
///
/// Every differentiable op appends one node holding its output value and a
/// closure that distributes the node's output gradient to its inputs.
/// backward() replays the closures in reverse order and finally adds each
/// parameter leaf's gradient into the owning Tensor's grad slot.
/// Parameters that never appear on the tape keep whatever grad they had
/// (zero after ParamStore::zero_grad()).
template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;
  using BackwardFn = std::function<void(Tape&, Var)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter. Frozen tensors are recorded as constants.
  Var param(Tensor<Scalar>& tensor);

  /// Record an op output. The node requires grad iff any input does; when
  /// none does, `backward` is dropped.
  Var emit(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var emit(Matrix value, const std::vector<Var>& inputs, BackwardFn backward);

  [[nodiscard]] const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  /// Output gradient of `v`; empty until some consumer has accumulated into it.
  [[nodiscard]] const Matrix& grad(Var v) const { return nodes_[check(v)].grad; }
  [[nodiscard]] bool has_grad(Var v) const { return nodes_[check(v)].grad.size() != 0; }

  /// grad(v) += delta. No-op when v does not require grad.
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[check(v)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor<Scalar>* param = nullptr;
  };

  [[nodiscard]] std::size_t check(Var v) const;

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace sipfuse

namespace sipfuse {

/// Binds store parameters to a tape, each at most once, so that every use
/// of a parameter within one forward pass shares a single leaf.
template <typename Scalar>
class ParamBinding {
 public:
  ParamBinding(Tape<Scalar>& tape, ParamStore<Scalar>& store) : tape_(tape), store_(store) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Var v = tape_.param(store_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  [[nodiscard]] Tape<Scalar>& tape() { return tape_; }
  [[nodiscard]] ParamStore<Scalar>& store() { return store_; }

 private:
  Tape<Scalar>& tape_;
  ParamStore<Scalar>& store_;
  std::map<std::string, Var> bound_;
};

}  // namespace sipfuse
