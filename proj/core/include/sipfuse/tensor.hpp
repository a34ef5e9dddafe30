#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sipfuse {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

/// A named trainable (or frozen) parameter: value plus a same-shape gradient slot.
/// Frozen tensors carry no gradient slot.
template <typename Scalar>
struct Tensor {
  Mat<Scalar> value;
  Mat<Scalar> grad;
  bool trainable = true;

  [[nodiscard]] bool has_grad() const { return trainable && grad.size() == value.size(); }
};

/// Flat, name-ordered store of model parameters.
///
/// Names are dotted paths ("trunk.lstm.fwd.w_ih"); the segment before the
/// first dot is the block used for parameter accounting. References returned
/// by add()/at() stay valid for the lifetime of the store.
template <typename Scalar>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  Tensor<Scalar>& add(const std::string& name, Mat<Scalar> value, bool trainable = true);
  [[nodiscard]] Tensor<Scalar>& at(const std::string& name);
  [[nodiscard]] const Tensor<Scalar>& at(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  [[nodiscard]] std::size_t size() const { return tensors_.size(); }
  [[nodiscard]] std::int64_t trainable_count() const;

  void zero_grad();

  [[nodiscard]] Map& tensors() { return tensors_; }
  [[nodiscard]] const Map& tensors() const { return tensors_; }

  template <typename Other>
  [[nodiscard]] ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& [name, t] : tensors_) {
      out.add(name, t.value.template cast<Other>(), t.trainable);
    }
    return out;
  }

 private:
  Map tensors_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace sipfuse
