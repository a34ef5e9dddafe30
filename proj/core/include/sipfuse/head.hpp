#pragma once

#include "sipfuse/fusion.hpp"
#include "sipfuse/ops.hpp"

#include <string_view>

namespace sipfuse {

/// Listener hearing-loss group.
enum class Severity { mild = 0, moderate = 1, moderately_severe = 2 };

inline constexpr int kSeverityCount = 3;

std::string_view to_string(Severity s);
/// Accepts "mild", "moderate", "moderately_severe". Throws DataError otherwise.
Severity parse_severity(std::string_view text);

/// Sizes of the shared predictor head.
struct HeadConfig {
  int d = 192;
  int lstm_hidden = 96;  // per direction; 2h == d feeds the residual
  int mlp_width = 192;
  int severity_embed_dim = 16;
  int adapter_rank = 16;
  int conv_kernel = 3;

  /// Defaults derived from the model width.
  static HeadConfig for_width(int d);
  void validate() const;
};

namespace head {

using fusion::Affine;
using ops::SeqVar;

struct TrunkParams {
  Affine conv;             // (k*d) x d kernel, same-length residual convolution
  ops::BiLstmParams lstm;  // d -> 2h
  Affine proj;             // 2h -> d
  Var attn_weight;         // d x d
  Var attn_vector;         // d x 1
};

/// x' = x + conv_same(x); y = proj(bilstm(x')) + x'; u = attention_pool(y).
/// Returns a 1 x d vector. Throws NumericError("empty utterance") when no
/// frame is valid.
template <typename Scalar>
Var trunk(Tape<Scalar>& tape, const SeqVar& seq, const TrunkParams& params);

struct AdapterParams {
  Var embedding;  // 3 x e
  Affine down;    // (d + e) -> r
  Affine up;      // r -> d
};

/// u' = u + up(relu(down([u | embedding[s]]))).
template <typename Scalar>
Var severity_adapt(Tape<Scalar>& tape, Var pooled, Severity severity, const AdapterParams& params);

struct OutputParams {
  Affine hidden;  // d -> m
  Affine back;    // m -> d
  Affine final;   // d -> 1
};

/// Residual MLP block followed by the scalar read-out; returns the 1x1
/// logit r. The bounded score is 100 * sigmoid(r).
template <typename Scalar>
Var predict_logit(Tape<Scalar>& tape, Var features, const OutputParams& params);

/// 100 / (1 + exp(-r)).
double score_from_logit(double logit);

}  // namespace head
}  // namespace sipfuse
