#pragma once

#include "sipfuse/ops.hpp"

#include <string>
#include <string_view>

namespace sipfuse {

enum class FusionKind {
  canary_only,
  wavlm_only,
  pool_late,
  frame_aligned,
  cross_attn,
  reverse_linear,
  reverse_tconv,
  reverse_cross_attn,
};

/// Temporal preparation of the fine stream before frame-aligned fusion.
enum class Prep { none, avg, conv };

enum class Ear { left = 0, right = 1 };

struct FusionVariant {
  FusionKind kind = FusionKind::frame_aligned;
  Prep prep = Prep::conv;
  int shift_steps = 0;

  /// prep and shift_steps are only meaningful for frame_aligned.
  void validate() const;
  [[nodiscard]] bool dual_backbone() const;
  [[nodiscard]] bool sequence_merge() const;
};

std::string_view to_string(FusionKind kind);
std::string_view to_string(Prep prep);
FusionKind parse_fusion_kind(std::string_view text);
Prep parse_prep(std::string_view text);

/// Downsampling factor between the fine and coarse streams.
inline constexpr int kRateFactor = 4;
/// Duration of one prepared-stream step in milliseconds.
inline constexpr int kShiftStepMs = 80;

namespace fusion {

using ops::SeqVar;

struct ProjectedPair {
  SeqVar canary;  // T_c x d
  SeqVar wavlm;   // T_w x d
};

struct Affine {
  Var weight;
  Var bias;
};

struct ProjectionParams {
  Affine canary;
  Affine wavlm;
};

/// Independent linear maps of both raw streams to width d. Throws
/// DimensionError when a raw width does not match its weight, and
/// ArgumentError when the fine/coarse frame-rate ratio falls outside
/// [3, 5].
template <typename Scalar>
ProjectedPair project(Tape<Scalar>& tape, const SeqVar& canary_raw, const SeqVar& wavlm_raw,
                      const ProjectionParams& params);

/// z = W [z_c | z_w] + b on pooled row vectors.
template <typename Scalar>
Var pool_late_fuse(Tape<Scalar>& tape, Var z_canary, Var z_wavlm, const Affine& fuse);

struct FrameAlignParams {
  Affine conv;  // kernel (4d x d) and bias; unused for Prep::avg
  Affine fuse;  // 2d -> d
};

/// Prepares the fine stream (masked average or stride-4 convolution),
/// shifts it by `shift_steps`, maps it onto the coarse timeline and fuses
/// per frame. Output length and mask follow the coarse stream.
template <typename Scalar>
SeqVar frame_align_fuse(Tape<Scalar>& tape, const ProjectedPair& pair, Prep prep, int shift_steps,
                        const FrameAlignParams& params);

enum class AttnDirection { canary_queries_wavlm, wavlm_queries_canary };

struct CrossAttnParams {
  Affine query;
  Affine key;
  Affine value;
  Affine fuse;  // [queries | attended] 2d -> d
};

/// Single-head scaled dot-product attention from the query stream over the
/// valid frames of the key stream, then a per-frame affine fuse of the
/// query frames with their attended context.
template <typename Scalar>
SeqVar cross_attn_fuse(Tape<Scalar>& tape, const ProjectedPair& pair, AttnDirection direction,
                       const CrossAttnParams& params);

enum class ReverseMode { linear, tconv };

struct ReverseAlignParams {
  Affine tconv;  // kernel (4d x d) and bias; unused for ReverseMode::linear
  Affine fuse;   // [upsampled canary | wavlm] 2d -> d
};

/// Maps the coarse stream onto the fine timeline and fuses per frame.
template <typename Scalar>
SeqVar reverse_align_fuse(Tape<Scalar>& tape, const ProjectedPair& pair, ReverseMode mode,
                          const ReverseAlignParams& params);

/// W_lr [z_L | z_R] + b_lr on pooled ear vectors.
template <typename Scalar>
Var ear_merge_pooled(Tape<Scalar>& tape, Var z_left, Var z_right, const Affine& merge);

/// Per-frame merge of the two ears' sequences; the shorter one is padded
/// with invalid frames. A frame is valid iff either ear's frame is.
template <typename Scalar>
SeqVar ear_merge_sequence(Tape<Scalar>& tape, const SeqVar& left, const SeqVar& right, const Affine& merge);

}  // namespace fusion
}  // namespace sipfuse
