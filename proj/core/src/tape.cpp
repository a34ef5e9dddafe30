#include "sipfuse/tape.hpp"

#include "sipfuse/errors.hpp"

#include <string>

namespace sipfuse {

template <typename Scalar>
std::size_t Tape<Scalar>::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ArgumentError("tape: invalid variable handle " + std::to_string(v.id));
  }
  return static_cast<std::size_t>(v.id);
}

template <typename Scalar>
Var Tape<Scalar>::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Scalar>
Var Tape<Scalar>::param(Tensor<Scalar>& tensor) {
  Node n;
  n.value = tensor.value;
  n.requires_grad = tensor.trainable;
  n.param = tensor.trainable ? &tensor : nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Scalar>
Var Tape<Scalar>::emit(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (nodes_[check(in)].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Scalar>
Var Tape<Scalar>::emit(Matrix value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (nodes_[check(in)].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Scalar>
void Tape<Scalar>::backward(Var root) {
  const std::size_t r = check(root);
  if (nodes_[r].value.size() != 1) {
    throw DimensionError("tape: backward root must be a 1x1 scalar");
  }
  if (!nodes_[r].requires_grad) return;
  nodes_[r].grad = Matrix::Ones(1, 1);
  for (std::size_t i = r + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, Var{static_cast<std::int32_t>(i)});
    if (n.param != nullptr) {
      Tensor<Scalar>& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
      }
      p.grad += n.grad;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace sipfuse
