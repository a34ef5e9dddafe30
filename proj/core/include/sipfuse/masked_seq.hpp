#pragma once

#include "sipfuse/tensor.hpp"

#include <cstdint>
#include <vector>

namespace sipfuse {

/// Per-frame validity flags; nonzero = valid.
using Mask = std::vector<std::uint8_t>;

/// A T x d frame matrix with a validity mask and a frame rate.
///
/// Values at invalid frames are zero after make(); every operation in this
/// library re-zeroes its invalid outputs so that results never depend on
/// padding content.
template <typename Scalar>
struct MaskedSeq {
  Mat<Scalar> values;
  Mask mask;
  double frame_rate_hz = 1.0;

  /// Validates shapes and rate, then zeroes invalid rows.
  static MaskedSeq make(Mat<Scalar> values, Mask mask, double frame_rate_hz);
  /// All frames valid.
  static MaskedSeq dense(Mat<Scalar> values, double frame_rate_hz);

  [[nodiscard]] Index length() const { return values.rows(); }
  [[nodiscard]] Index dim() const { return values.cols(); }
  [[nodiscard]] Index valid_count() const;
  /// One past the last valid frame (0 when nothing is valid).
  [[nodiscard]] Index extent() const;
  [[nodiscard]] bool valid(Index t) const { return mask[static_cast<std::size_t>(t)] != 0; }

  /// Copy with `extra` invalid frames appended.
  [[nodiscard]] MaskedSeq padded(Index extra) const;
};

Index mask_valid_count(const Mask& mask);
Index mask_extent(const Mask& mask);
Mask full_mask(Index length);

extern template struct MaskedSeq<float>;
extern template struct MaskedSeq<double>;

}  // namespace sipfuse
