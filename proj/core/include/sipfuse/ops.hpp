#pragma once

#include "sipfuse/masked_seq.hpp"
#include "sipfuse/tape.hpp"

namespace sipfuse::ops {

/// A masked sequence whose values live on a tape.
struct SeqVar {
  Var values;
  Mask mask;
  double frame_rate_hz = 1.0;

  [[nodiscard]] Index length() const { return static_cast<Index>(mask.size()); }
};

template <typename Scalar>
SeqVar constant_seq(Tape<Scalar>& tape, const MaskedSeq<Scalar>& seq);

template <typename Scalar>
MaskedSeq<Scalar> to_masked(const Tape<Scalar>& tape, const SeqVar& seq);

// ---------------------------------------------------------------------------
// Dense primitives. Shapes follow Eigen conventions (rows x cols); row
// vectors are 1 x n.

template <typename Scalar>
Var matmul(Tape<Scalar>& tape, Var a, Var b);
/// a * b^T
template <typename Scalar>
Var matmul_nt(Tape<Scalar>& tape, Var a, Var b);
template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b);
/// x + broadcast row vector `bias` over every row of x.
template <typename Scalar>
Var add_row(Tape<Scalar>& tape, Var x, Var bias);
template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var x, Scalar factor);
template <typename Scalar>
Var add_scalar(Tape<Scalar>& tape, Var x, Scalar offset);
template <typename Scalar>
Var tanh(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var sigmoid(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var square(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x);
/// [a | b] for equal row counts.
template <typename Scalar>
Var concat_cols(Tape<Scalar>& tape, Var a, Var b);
/// Row `index` of x as a 1 x cols vector (embedding lookup).
template <typename Scalar>
Var select_row(Tape<Scalar>& tape, Var x, Index index);
/// Zero rows whose mask entry is 0; gradient is blocked there too.
template <typename Scalar>
Var mask_rows(Tape<Scalar>& tape, Var x, const Mask& mask);
/// alpha^T * f for alpha (T x 1), f (T x d) -> 1 x d.
template <typename Scalar>
Var weighted_sum(Tape<Scalar>& tape, Var alpha, Var f);

// ---------------------------------------------------------------------------
// Masked sequence operations.

/// Affine map of a row vector: x W + b, with W d_in x d_out and b 1 x d_out.
template <typename Scalar>
Var linear(Tape<Scalar>& tape, Var x, Var weight, Var bias);

/// Per valid frame y_t = x_t W + b; invalid frames stay zero and invalid.
template <typename Scalar>
SeqVar linear(Tape<Scalar>& tape, const SeqVar& x, Var weight, Var bias);

/// Strided valid convolution without implicit padding. `kernel` is stored
/// as (k * d_in) x d_out with tap j occupying rows [j*d_in, (j+1)*d_in).
/// T_out = floor((T_in - k) / stride) + 1, or 0 when T_in < k. An output
/// frame is valid iff its window holds at least one valid input frame.
template <typename Scalar>
SeqVar conv1d(Tape<Scalar>& tape, const SeqVar& x, Var kernel, Var bias, int stride);

/// Stride-1 convolution with zero padding of k/2 frames on each side
/// (k odd); output keeps the input length and mask.
template <typename Scalar>
SeqVar conv1d_same(Tape<Scalar>& tape, const SeqVar& x, Var kernel, Var bias);

/// Transposed convolution, kernel layout as in conv1d. Input frame t adds
/// x_t K_j to output frame t*stride + j. T_out = (T_in - 1) * stride + k.
template <typename Scalar>
SeqVar tconv1d(Tape<Scalar>& tape, const SeqVar& x, Var kernel, Var bias, int stride);

/// Non-overlapping windows of `factor` frames; each output is the mean of
/// the valid frames in its window. T_out = ceil(T_in / factor).
template <typename Scalar>
SeqVar masked_avg_downsample(Tape<Scalar>& tape, const SeqVar& x, int factor);

/// Maps the first `source_extent` input frames onto the first
/// `target_extent` output frames by averaging valid frames over
/// [floor(t*S/E), max(floor(t*S/E)+1, floor((t+1)*S/E))). Output frames at
/// or beyond `target_extent` are invalid. Negative extents default to the
/// full input length and `target_length`.
template <typename Scalar>
SeqVar adaptive_resize(Tape<Scalar>& tape, const SeqVar& x, Index target_length,
                       Index source_extent = -1, Index target_extent = -1);

/// Linear interpolation from the first `source_extent` input frames onto
/// the first `target_extent` output frames with position scale
/// (S - 1) / (E - 1). A single valid endpoint is copied; no valid endpoint
/// gives an invalid frame.
template <typename Scalar>
SeqVar linear_interp_upsample(Tape<Scalar>& tape, const SeqVar& x, Index target_length,
                              Index source_extent = -1, Index target_extent = -1);

/// Softmax over the valid entries of a T x 1 score vector; invalid entries
/// get exactly 0. Throws NumericError("empty attention support") when no
/// entry is valid.
template <typename Scalar>
Var masked_softmax(Tape<Scalar>& tape, Var scores, const Mask& mask);

/// Row-wise masked softmax of a Tq x Tk score matrix over valid key columns.
template <typename Scalar>
Var masked_row_softmax(Tape<Scalar>& tape, Var scores, const Mask& key_mask);

struct LstmDirection {
  Var w_ih;  // d x 4h, gate blocks [input | forget | cell | output]
  Var w_hh;  // h x 4h
  Var bias;  // 1 x 4h
};

struct BiLstmParams {
  LstmDirection forward;
  LstmDirection backward;
};

/// One-layer bidirectional LSTM. Invalid frames hold the recurrent state and
/// emit zeros. Output width is 2h: [forward | backward].
template <typename Scalar>
SeqVar bilstm(Tape<Scalar>& tape, const SeqVar& x, const BiLstmParams& params);

/// Additive attention pooling: e_t = tanh(f_t W_a) w, alpha = masked
/// softmax(e), u = sum_t alpha_t f_t. Returns a 1 x d row vector.
template <typename Scalar>
Var attention_pool(Tape<Scalar>& tape, const SeqVar& f, Var attn_weight, Var attn_vector);

/// Output frame t takes input frame t - delta when it exists and is valid;
/// vacated frames are zero and invalid. No wrap-around.
template <typename Scalar>
SeqVar temporal_shift(Tape<Scalar>& tape, const SeqVar& x, Index delta);

/// Per-frame [a_t | b_t] for equal-length sequences, re-masked by `mask`.
template <typename Scalar>
SeqVar concat_features(Tape<Scalar>& tape, const SeqVar& a, const SeqVar& b, const Mask& mask);

/// Appends invalid zero frames up to `length` (no-op when already longer).
template <typename Scalar>
SeqVar pad_to(Tape<Scalar>& tape, const SeqVar& x, Index length);

}  // namespace sipfuse::ops
