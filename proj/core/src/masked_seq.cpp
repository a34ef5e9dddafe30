#include "sipfuse/masked_seq.hpp"

#include "sipfuse/errors.hpp"

#include <string>

namespace sipfuse {

Index mask_valid_count(const Mask& mask) {
  Index n = 0;
  for (auto m : mask) n += (m != 0);
  return n;
}

Index mask_extent(const Mask& mask) {
  for (std::size_t t = mask.size(); t-- > 0;) {
    if (mask[t] != 0) return static_cast<Index>(t + 1);
  }
  return 0;
}

Mask full_mask(Index length) { return Mask(static_cast<std::size_t>(length), 1); }

template <typename Scalar>
MaskedSeq<Scalar> MaskedSeq<Scalar>::make(Mat<Scalar> values, Mask mask, double frame_rate_hz) {
  if (static_cast<Index>(mask.size()) != values.rows()) {
    throw DimensionError("masked sequence: mask length " + std::to_string(mask.size()) +
                         " != frame count " + std::to_string(values.rows()));
  }
  if (values.cols() < 1) throw DimensionError("masked sequence: feature dim must be >= 1");
  if (!(frame_rate_hz > 0.0)) throw ArgumentError("masked sequence: frame rate must be positive");
  for (Index t = 0; t < values.rows(); ++t) {
    if (mask[static_cast<std::size_t>(t)] == 0) values.row(t).setZero();
  }
  return MaskedSeq{std::move(values), std::move(mask), frame_rate_hz};
}

template <typename Scalar>
MaskedSeq<Scalar> MaskedSeq<Scalar>::dense(Mat<Scalar> values, double frame_rate_hz) {
  Mask m = full_mask(values.rows());
  return make(std::move(values), std::move(m), frame_rate_hz);
}

template <typename Scalar>
Index MaskedSeq<Scalar>::valid_count() const {
  return mask_valid_count(mask);
}

template <typename Scalar>
Index MaskedSeq<Scalar>::extent() const {
  return mask_extent(mask);
}

template <typename Scalar>
MaskedSeq<Scalar> MaskedSeq<Scalar>::padded(Index extra) const {
  MaskedSeq out;
  out.values = Mat<Scalar>::Zero(length() + extra, dim());
  out.values.topRows(length()) = values;
  out.mask = mask;
  out.mask.resize(static_cast<std::size_t>(length() + extra), 0);
  out.frame_rate_hz = frame_rate_hz;
  return out;
}

template struct MaskedSeq<float>;
template struct MaskedSeq<double>;

}  // namespace sipfuse
