#include "sipfuse/fusion.hpp"

#include "sipfuse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sipfuse {

void FusionVariant::validate() const {
  if (prep != Prep::none && kind != FusionKind::frame_aligned) {
    throw ConfigError("fusion: prep '" + std::string(to_string(prep)) + "' requires kind frame_aligned");
  }
  if (kind == FusionKind::frame_aligned && prep == Prep::none) {
    throw ConfigError("fusion: frame_aligned requires prep avg or conv");
  }
  if (shift_steps != 0 && kind != FusionKind::frame_aligned) {
    throw ConfigError("fusion: shift_steps is only supported for frame_aligned");
  }
}

bool FusionVariant::dual_backbone() const {
  return kind != FusionKind::canary_only && kind != FusionKind::wavlm_only;
}

bool FusionVariant::sequence_merge() const {
  return dual_backbone() && kind != FusionKind::pool_late;
}

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::canary_only: return "canary_only";
    case FusionKind::wavlm_only: return "wavlm_only";
    case FusionKind::pool_late: return "pool_late";
    case FusionKind::frame_aligned: return "frame_aligned";
    case FusionKind::cross_attn: return "cross_attn";
    case FusionKind::reverse_linear: return "reverse_linear";
    case FusionKind::reverse_tconv: return "reverse_tconv";
    case FusionKind::reverse_cross_attn: return "reverse_cross_attn";
  }
  return "?";
}

std::string_view to_string(Prep prep) {
  switch (prep) {
    case Prep::none: return "none";
    case Prep::avg: return "avg";
    case Prep::conv: return "conv";
  }
  return "?";
}

FusionKind parse_fusion_kind(std::string_view text) {
  for (auto k : {FusionKind::canary_only, FusionKind::wavlm_only, FusionKind::pool_late, FusionKind::frame_aligned,
                 FusionKind::cross_attn, FusionKind::reverse_linear, FusionKind::reverse_tconv,
                 FusionKind::reverse_cross_attn}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown fusion kind '" + std::string(text) + "'");
}

Prep parse_prep(std::string_view text) {
  for (auto p : {Prep::none, Prep::avg, Prep::conv}) {
    if (to_string(p) == text) return p;
  }
  throw ConfigError("unknown prep '" + std::string(text) + "'");
}

namespace fusion {

template <typename Scalar>
ProjectedPair project(Tape<Scalar>& tape, const SeqVar& canary_raw, const SeqVar& wavlm_raw,
                      const ProjectionParams& params) {
  const auto check = [&](const SeqVar& raw, const Affine& a, const char* name) {
    const Index got = tape.value(raw.values).cols();
    const Index want = tape.value(a.weight).rows();
    if (got != want) {
      throw DimensionError(std::string("project: ") + name + " raw feature dim " + std::to_string(got) +
                           ", expected " + std::to_string(want));
    }
  };
  check(canary_raw, params.canary, "canary");
  check(wavlm_raw, params.wavlm, "wavlm");
  const double ratio = wavlm_raw.frame_rate_hz / canary_raw.frame_rate_hz;
  if (ratio < 3.0 || ratio > 5.0) {
    throw ArgumentError("project: wavlm/canary frame-rate ratio " + std::to_string(ratio) + " outside [3, 5]");
  }
  return ProjectedPair{ops::linear(tape, canary_raw, params.canary.weight, params.canary.bias),
                       ops::linear(tape, wavlm_raw, params.wavlm.weight, params.wavlm.bias)};
}

template <typename Scalar>
Var pool_late_fuse(Tape<Scalar>& tape, Var z_canary, Var z_wavlm, const Affine& fuse) {
  return ops::linear(tape, ops::concat_cols(tape, z_canary, z_wavlm), fuse.weight, fuse.bias);
}

template <typename Scalar>
SeqVar frame_align_fuse(Tape<Scalar>& tape, const ProjectedPair& pair, Prep prep, int shift_steps,
                        const FrameAlignParams& params) {
  const SeqVar& canary = pair.canary;
  if (canary.length() == 0) throw ArgumentError("empty canary timeline");

  SeqVar prepared;
  switch (prep) {
    case Prep::avg:
      prepared = ops::masked_avg_downsample(tape, pair.wavlm, kRateFactor);
      break;
    case Prep::conv: {
      // Cover a partial trailing window so the last valid fine frames are
      // not dropped; keeps the result independent of trailing padding.
      const Index covered = ((pair.wavlm.length() + kRateFactor - 1) / kRateFactor) * kRateFactor;
      const SeqVar padded = ops::pad_to(tape, pair.wavlm, covered);
      prepared = ops::conv1d(tape, padded, params.conv.weight, params.conv.bias, kRateFactor);
      break;
    }
    case Prep::none:
      throw ArgumentError("frame_align_fuse: prep must be avg or conv");
  }
  const Index source_extent = mask_extent(prepared.mask);
  const SeqVar shifted = ops::temporal_shift(tape, prepared, shift_steps);
  const SeqVar aligned =
      ops::adaptive_resize(tape, shifted, canary.length(), source_extent, mask_extent(canary.mask));
  const SeqVar joined = ops::concat_features(tape, canary, aligned, canary.mask);
  return ops::linear(tape, joined, params.fuse.weight, params.fuse.bias);
}

template <typename Scalar>
SeqVar cross_attn_fuse(Tape<Scalar>& tape, const ProjectedPair& pair, AttnDirection direction,
                       const CrossAttnParams& params) {
  const bool canary_queries = direction == AttnDirection::canary_queries_wavlm;
  const SeqVar& queries = canary_queries ? pair.canary : pair.wavlm;
  const SeqVar& keys = canary_queries ? pair.wavlm : pair.canary;
  if (mask_valid_count(keys.mask) == 0) throw NumericError("empty attention support");

  const SeqVar q = ops::linear(tape, queries, params.query.weight, params.query.bias);
  const SeqVar k = ops::linear(tape, keys, params.key.weight, params.key.bias);
  const SeqVar v = ops::linear(tape, keys, params.value.weight, params.value.bias);
  const Index width = tape.value(q.values).cols();
  const Var scores =
      ops::scale(tape, ops::matmul_nt(tape, q.values, k.values), static_cast<Scalar>(1.0 / std::sqrt(width)));
  const Var weights = ops::masked_row_softmax(tape, scores, keys.mask);
  const Var attended = ops::mask_rows(tape, ops::matmul(tape, weights, v.values), queries.mask);
  const SeqVar context{attended, queries.mask, queries.frame_rate_hz};
  const SeqVar joined = ops::concat_features(tape, queries, context, queries.mask);
  return ops::linear(tape, joined, params.fuse.weight, params.fuse.bias);
}

template <typename Scalar>
SeqVar reverse_align_fuse(Tape<Scalar>& tape, const ProjectedPair& pair, ReverseMode mode,
                          const ReverseAlignParams& params) {
  const SeqVar& canary = pair.canary;
  const SeqVar& wavlm = pair.wavlm;
  const Index canary_extent = mask_extent(canary.mask);
  if (canary.length() == 0 || canary_extent == 0) throw ArgumentError("empty canary timeline");
  const Index target_extent = mask_extent(wavlm.mask);

  SeqVar upsampled;
  if (mode == ReverseMode::linear) {
    upsampled = ops::linear_interp_upsample(tape, canary, std::max(wavlm.length(), canary.length()), canary_extent,
                                            target_extent);
    if (upsampled.length() > wavlm.length()) {
      throw DimensionError("reverse_align_fuse: fine stream shorter than coarse stream");
    }
  } else {
    const SeqVar expanded = ops::tconv1d(tape, canary, params.tconv.weight, params.tconv.bias, kRateFactor);
    upsampled = ops::adaptive_resize(tape, expanded, wavlm.length(), mask_extent(expanded.mask), target_extent);
  }
  const SeqVar joined = ops::concat_features(tape, upsampled, wavlm, wavlm.mask);
  return ops::linear(tape, joined, params.fuse.weight, params.fuse.bias);
}

template <typename Scalar>
Var ear_merge_pooled(Tape<Scalar>& tape, Var z_left, Var z_right, const Affine& merge) {
  return ops::linear(tape, ops::concat_cols(tape, z_left, z_right), merge.weight, merge.bias);
}

template <typename Scalar>
SeqVar ear_merge_sequence(Tape<Scalar>& tape, const SeqVar& left, const SeqVar& right, const Affine& merge) {
  if (left.length() == 0 && right.length() == 0) throw ArgumentError("ear_merge_sequence: both ears empty");
  const Index len = std::max(left.length(), right.length());
  const SeqVar l = ops::pad_to(tape, left, len);
  const SeqVar r = ops::pad_to(tape, right, len);
  Mask either(static_cast<std::size_t>(len), 0);
  for (std::size_t t = 0; t < either.size(); ++t) either[t] = (l.mask[t] != 0 || r.mask[t] != 0) ? 1 : 0;
  const SeqVar joined = ops::concat_features(tape, l, r, either);
  return ops::linear(tape, joined, merge.weight, merge.bias);
}

#define SIPFUSE_INSTANTIATE_FUSION(S)                                                                       \
  template ProjectedPair project<S>(Tape<S>&, const SeqVar&, const SeqVar&, const ProjectionParams&);       \
  template Var pool_late_fuse<S>(Tape<S>&, Var, Var, const Affine&);                                        \
  template SeqVar frame_align_fuse<S>(Tape<S>&, const ProjectedPair&, Prep, int, const FrameAlignParams&);  \
  template SeqVar cross_attn_fuse<S>(Tape<S>&, const ProjectedPair&, AttnDirection, const CrossAttnParams&); \
  template SeqVar reverse_align_fuse<S>(Tape<S>&, const ProjectedPair&, ReverseMode, const ReverseAlignParams&); \
  template Var ear_merge_pooled<S>(Tape<S>&, Var, Var, const Affine&);                                      \
  template SeqVar ear_merge_sequence<S>(Tape<S>&, const SeqVar&, const SeqVar&, const Affine&);

SIPFUSE_INSTANTIATE_FUSION(float)
SIPFUSE_INSTANTIATE_FUSION(double)

#undef SIPFUSE_INSTANTIATE_FUSION

}  // namespace fusion
}  // namespace sipfuse
