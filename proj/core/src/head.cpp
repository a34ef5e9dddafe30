#include "sipfuse/head.hpp"

#include "sipfuse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sipfuse {

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::mild: return "mild";
    case Severity::moderate: return "moderate";
    case Severity::moderately_severe: return "moderately_severe";
  }
  return "?";
}

Severity parse_severity(std::string_view text) {
  for (auto s : {Severity::mild, Severity::moderate, Severity::moderately_severe}) {
    if (to_string(s) == text) return s;
  }
  throw DataError("unknown severity '" + std::string(text) + "'");
}

HeadConfig HeadConfig::for_width(int d) {
  HeadConfig c;
  c.d = d;
  c.lstm_hidden = d / 2;
  c.mlp_width = d;
  return c;
}

void HeadConfig::validate() const {
  if (d < 2 || d % 2 != 0) throw ConfigError("head: d must be even and >= 2");
  if (lstm_hidden < 1 || mlp_width < 1 || severity_embed_dim < 1 || adapter_rank < 1 || conv_kernel < 1) {
    throw ConfigError("head: all extents must be >= 1");
  }
  if (conv_kernel % 2 == 0) throw ConfigError("head: conv_kernel must be odd");
}

namespace head {

template <typename Scalar>
Var trunk(Tape<Scalar>& tape, const SeqVar& seq, const TrunkParams& params) {
  if (mask_valid_count(seq.mask) == 0) throw NumericError("empty utterance");
  const SeqVar conv = ops::conv1d_same(tape, seq, params.conv.weight, params.conv.bias);
  const SeqVar x{ops::add(tape, seq.values, conv.values), seq.mask, seq.frame_rate_hz};
  const SeqVar recurrent = ops::bilstm(tape, x, params.lstm);
  const SeqVar projected = ops::linear(tape, recurrent, params.proj.weight, params.proj.bias);
  const SeqVar y{ops::mask_rows(tape, ops::add(tape, projected.values, x.values), x.mask), x.mask,
                 x.frame_rate_hz};
  return ops::attention_pool(tape, y, params.attn_weight, params.attn_vector);
}

template <typename Scalar>
Var severity_adapt(Tape<Scalar>& tape, Var pooled, Severity severity, const AdapterParams& params) {
  const int index = static_cast<int>(severity);
  if (index < 0 || index >= kSeverityCount) throw DataError("severity_adapt: unknown severity label");
  const Var embed = ops::select_row(tape, params.embedding, index);
  const Var joined = ops::concat_cols(tape, pooled, embed);
  const Var low = ops::relu(tape, ops::linear(tape, joined, params.down.weight, params.down.bias));
  return ops::add(tape, pooled, ops::linear(tape, low, params.up.weight, params.up.bias));
}

template <typename Scalar>
Var predict_logit(Tape<Scalar>& tape, Var features, const OutputParams& params) {
  const Var hidden = ops::relu(tape, ops::linear(tape, features, params.hidden.weight, params.hidden.bias));
  const Var block = ops::add(tape, features, ops::linear(tape, hidden, params.back.weight, params.back.bias));
  return ops::linear(tape, block, params.final.weight, params.final.bias);
}

double score_from_logit(double logit) {
  const double y = 100.0 / (1.0 + std::exp(-logit));
  // Keep the score strictly inside (0, 100) even where the sigmoid saturates.
  return std::clamp(y, std::nextafter(0.0, 1.0), std::nextafter(100.0, 0.0));
}

template Var trunk<float>(Tape<float>&, const SeqVar&, const TrunkParams&);
template Var trunk<double>(Tape<double>&, const SeqVar&, const TrunkParams&);
template Var severity_adapt<float>(Tape<float>&, Var, Severity, const AdapterParams&);
template Var severity_adapt<double>(Tape<double>&, Var, Severity, const AdapterParams&);
template Var predict_logit<float>(Tape<float>&, Var, const OutputParams&);
template Var predict_logit<double>(Tape<double>&, Var, const OutputParams&);

}  // namespace head
}  // namespace sipfuse
