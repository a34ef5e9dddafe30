#pragma once

#include "sipfuse/fusion.hpp"
#include "sipfuse/head.hpp"
#include "sipfuse/masked_seq.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <string>

namespace sipfuse {

/// Raw feature width produced by both frozen encoders.
inline constexpr int kEncoderDim = 1024;

struct ModelConfig {
  FusionVariant fusion;
  HeadConfig head;
  int input_dim = kEncoderDim;

  void validate() const;

  /// Default sizes: d = 256 for single-backbone variants, 192 otherwise.
  static ModelConfig defaults(FusionVariant fusion);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// One binaural utterance: per-ear raw encoder sequences plus the listener
/// severity used for late conditioning.
template <typename Scalar>
struct UtteranceInput {
  std::array<MaskedSeq<Scalar>, 2> canary;  // indexed by Ear
  std::array<MaskedSeq<Scalar>, 2> wavlm;
  Severity severity = Severity::moderate;
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  ParamStore<Scalar> params;
};

/// Allocates and initializes every parameter of the configured variant.
/// Matrices are uniform in +-1/sqrt(fan_in), biases zero, LSTM forget-gate
/// biases 1. Deterministic in `seed`.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config, std::uint64_t seed);

/// Records the full forward pass and returns the 1x1 logit r.
template <typename Scalar>
Var forward_logit(Tape<Scalar>& tape, Model<Scalar>& model, const UtteranceInput<Scalar>& input);

/// Bounded score 100 * sigmoid(r), evaluated on a private tape.
template <typename Scalar>
double predict_score(Model<Scalar>& model, const UtteranceInput<Scalar>& input);

struct ParamCount {
  std::int64_t total = 0;
  std::map<std::string, std::int64_t> by_block;
};

template <typename Scalar>
ParamCount count_params(const Model<Scalar>& model);

/// Counts without allocating values (same result as count_params on an
/// initialized model).
ParamCount count_params(const ModelConfig& config);

template <typename Scalar>
UtteranceInput<Scalar> cast_input(const UtteranceInput<float>& in) {
  UtteranceInput<Scalar> out;
  for (int e = 0; e < 2; ++e) {
    out.canary[e] = MaskedSeq<Scalar>{in.canary[e].values.template cast<Scalar>(), in.canary[e].mask,
                                      in.canary[e].frame_rate_hz};
    out.wavlm[e] = MaskedSeq<Scalar>{in.wavlm[e].values.template cast<Scalar>(), in.wavlm[e].mask,
                                     in.wavlm[e].frame_rate_hz};
  }
  out.severity = in.severity;
  return out;
}

}  // namespace sipfuse
