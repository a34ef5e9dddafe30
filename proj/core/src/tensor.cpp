#include "sipfuse/tensor.hpp"

#include "sipfuse/errors.hpp"

namespace sipfuse {

template <typename Scalar>
Tensor<Scalar>& ParamStore<Scalar>::add(const std::string& name, Mat<Scalar> value, bool trainable) {
  if (tensors_.count(name) != 0) {
    throw ArgumentError("parameter '" + name + "' already registered");
  }
  Tensor<Scalar> t;
  t.trainable = trainable;
  if (trainable) t.grad = Mat<Scalar>::Zero(value.rows(), value.cols());
  t.value = std::move(value);
  return tensors_.emplace(name, std::move(t)).first->second;
}

template <typename Scalar>
Tensor<Scalar>& ParamStore<Scalar>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
const Tensor<Scalar>& ParamStore<Scalar>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
std::int64_t ParamStore<Scalar>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : tensors_) {
    if (t.trainable) n += static_cast<std::int64_t>(t.value.size());
  }
  return n;
}

template <typename Scalar>
void ParamStore<Scalar>::zero_grad() {
  for (auto& [_, t] : tensors_) {
    if (t.trainable) t.grad.setZero(t.value.rows(), t.value.cols());
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace sipfuse
