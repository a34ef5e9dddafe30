#include "sipfuse/model.hpp"

#include "sipfuse/errors.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace sipfuse {

void ModelConfig::validate() const {
  fusion.validate();
  head.validate();
  if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
  if (2 * head.lstm_hidden != head.d) {
    throw ConfigError("model: BiLSTM output width 2*lstm_hidden must equal d for the residual");
  }
}

ModelConfig ModelConfig::defaults(FusionVariant fusion) {
  ModelConfig c;
  c.fusion = fusion;
  c.head = HeadConfig::for_width(fusion.dual_backbone() ? 192 : 256);
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"kind", std::string(to_string(c.fusion.kind))},
                     {"prep", std::string(to_string(c.fusion.prep))},
                     {"shift_steps", c.fusion.shift_steps},
                     {"input_dim", c.input_dim},
                     {"d", c.head.d},
                     {"lstm_hidden", c.head.lstm_hidden},
                     {"mlp_width", c.head.mlp_width},
                     {"severity_embed_dim", c.head.severity_embed_dim},
                     {"adapter_rank", c.head.adapter_rank},
                     {"conv_kernel", c.head.conv_kernel}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* kKeys[] = {"kind",        "prep",      "shift_steps",        "input_dim",    "d",
                                "lstm_hidden", "mlp_width", "severity_embed_dim", "adapter_rank", "conv_kernel"};
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : kKeys) known = known || key == k;
    if (!known) throw ConfigError("model config: unknown key '" + key + "'");
  }
  if (!j.contains("kind")) throw ConfigError("model config: missing key 'kind'");
  try {
    FusionVariant fv;
    fv.kind = parse_fusion_kind(j.at("kind").get<std::string>());
    fv.prep = parse_prep(j.value("prep", std::string(fv.kind == FusionKind::frame_aligned ? "conv" : "none")));
    fv.shift_steps = j.value("shift_steps", 0);
    c = ModelConfig::defaults(fv);
    c.input_dim = j.value("input_dim", c.input_dim);
    if (j.contains("d")) c.head = HeadConfig::for_width(j.at("d").get<int>());
    c.head.lstm_hidden = j.value("lstm_hidden", c.head.lstm_hidden);
    c.head.mlp_width = j.value("mlp_width", c.head.mlp_width);
    c.head.severity_embed_dim = j.value("severity_embed_dim", c.head.severity_embed_dim);
    c.head.adapter_rank = j.value("adapter_rank", c.head.adapter_rank);
    c.head.conv_kernel = j.value("conv_kernel", c.head.conv_kernel);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
}

namespace {

enum class Init { weight, bias, forget_bias, embedding };

struct ParamSpec {
  std::string name;
  Index rows;
  Index cols;
  Init init;
  Index fan_in;
};

void add_affine(std::vector<ParamSpec>& out, const std::string& prefix, Index in, Index outw) {
  out.push_back({prefix + ".weight", in, outw, Init::weight, in});
  out.push_back({prefix + ".bias", 1, outw, Init::bias, in});
}

void add_trunk(std::vector<ParamSpec>& out, const std::string& prefix, const HeadConfig& h) {
  const Index d = h.d;
  const Index hid = h.lstm_hidden;
  out.push_back({prefix + ".conv.weight", h.conv_kernel * d, d, Init::weight, h.conv_kernel * d});
  out.push_back({prefix + ".conv.bias", 1, d, Init::bias, d});
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = prefix + ".lstm." + dir;
    out.push_back({p + ".w_ih", d, 4 * hid, Init::weight, d});
    out.push_back({p + ".w_hh", hid, 4 * hid, Init::weight, hid});
    out.push_back({p + ".bias", 1, 4 * hid, Init::forget_bias, hid});
  }
  add_affine(out, prefix + ".proj", 2 * hid, d);
  out.push_back({prefix + ".attn.weight", d, d, Init::weight, d});
  out.push_back({prefix + ".attn.vector", d, 1, Init::weight, d});
}

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  std::vector<ParamSpec> s;
  const HeadConfig& h = c.head;
  const Index d = h.d;
  const FusionKind kind = c.fusion.kind;
  const bool dual = c.fusion.dual_backbone();

  if (kind == FusionKind::canary_only || dual) add_affine(s, "proj.canary", c.input_dim, d);
  if (kind == FusionKind::wavlm_only || dual) add_affine(s, "proj.wavlm", c.input_dim, d);

  switch (kind) {
    case FusionKind::canary_only:
    case FusionKind::wavlm_only:
      add_trunk(s, "trunk", h);
      add_affine(s, "ears", 2 * d, d);
      break;
    case FusionKind::pool_late:
      add_trunk(s, "trunk_canary", h);
      add_trunk(s, "trunk_wavlm", h);
      add_affine(s, "fuse", 2 * d, d);
      add_affine(s, "ears", 2 * d, d);
      break;
    case FusionKind::frame_aligned:
      if (c.fusion.prep == Prep::conv) {
        s.push_back({"prep.weight", kRateFactor * d, d, Init::weight, kRateFactor * d});
        s.push_back({"prep.bias", 1, d, Init::bias, d});
      }
      add_affine(s, "fuse", 2 * d, d);
      add_affine(s, "ears", 2 * d, d);
      add_trunk(s, "trunk", h);
      break;
    case FusionKind::cross_attn:
    case FusionKind::reverse_cross_attn:
      add_affine(s, "xattn.query", d, d);
      add_affine(s, "xattn.key", d, d);
      add_affine(s, "xattn.value", d, d);
      add_affine(s, "fuse", 2 * d, d);
      add_affine(s, "ears", 2 * d, d);
      add_trunk(s, "trunk", h);
      break;
    case FusionKind::reverse_linear:
    case FusionKind::reverse_tconv:
      if (kind == FusionKind::reverse_tconv) {
        s.push_back({"prep.weight", kRateFactor * d, d, Init::weight, d});
        s.push_back({"prep.bias", 1, d, Init::bias, d});
      }
      add_affine(s, "fuse", 2 * d, d);
      add_affine(s, "ears", 2 * d, d);
      add_trunk(s, "trunk", h);
      break;
  }

  s.push_back({"severity.embedding", kSeverityCount, h.severity_embed_dim, Init::embedding, h.severity_embed_dim});
  add_affine(s, "severity.down", d + h.severity_embed_dim, h.adapter_rank);
  add_affine(s, "severity.up", h.adapter_rank, d);
  add_affine(s, "output.hidden", d, h.mlp_width);
  add_affine(s, "output.back", h.mlp_width, d);
  add_affine(s, "output.final", d, 1);
  return s;
}

std::string block_of(const std::string& name) { return name.substr(0, name.find('.')); }

template <typename Scalar>
fusion::Affine affine(ParamBinding<Scalar>& bind, const std::string& prefix) {
  return fusion::Affine{bind(prefix + ".weight"), bind(prefix + ".bias")};
}

template <typename Scalar>
head::TrunkParams trunk_params(ParamBinding<Scalar>& bind, const std::string& prefix) {
  head::TrunkParams p;
  p.conv = affine(bind, prefix + ".conv");
  p.lstm.forward = {bind(prefix + ".lstm.fwd.w_ih"), bind(prefix + ".lstm.fwd.w_hh"), bind(prefix + ".lstm.fwd.bias")};
  p.lstm.backward = {bind(prefix + ".lstm.bwd.w_ih"), bind(prefix + ".lstm.bwd.w_hh"), bind(prefix + ".lstm.bwd.bias")};
  p.proj = affine(bind, prefix + ".proj");
  p.attn_weight = bind(prefix + ".attn.weight");
  p.attn_vector = bind(prefix + ".attn.vector");
  return p;
}

}  // namespace

template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<Scalar> m;
  m.config = config;
  std::mt19937_64 rng(seed);
  for (const ParamSpec& spec : param_specs(config)) {
    Mat<Scalar> v = Mat<Scalar>::Zero(spec.rows, spec.cols);
    switch (spec.init) {
      case Init::weight:
      case Init::embedding: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<Scalar>(dist(rng));
        break;
      }
      case Init::bias:
        break;
      case Init::forget_bias: {
        const Index h = spec.cols / 4;
        v.block(0, h, 1, h).setOnes();
        break;
      }
    }
    m.params.add(spec.name, std::move(v));
  }
  return m;
}

template <typename Scalar>
Var forward_logit(Tape<Scalar>& tape, Model<Scalar>& model, const UtteranceInput<Scalar>& input) {
  using ops::SeqVar;
  const ModelConfig& c = model.config;
  ParamBinding<Scalar> bind(tape, model.params);
  const FusionKind kind = c.fusion.kind;

  const auto seq = [&](const MaskedSeq<Scalar>& s) { return ops::constant_seq(tape, s); };
  const auto check_dim = [&](const MaskedSeq<Scalar>& s, const char* name) {
    if (s.dim() != c.input_dim) {
      throw DimensionError(std::string("forward: ") + name + " feature dim " + std::to_string(s.dim()) +
                           ", expected " + std::to_string(c.input_dim));
    }
  };

  Var pooled;
  if (kind == FusionKind::canary_only || kind == FusionKind::wavlm_only) {
    const bool canary = kind == FusionKind::canary_only;
    const fusion::Affine proj = affine(bind, canary ? "proj.canary" : "proj.wavlm");
    const head::TrunkParams tp = trunk_params(bind, "trunk");
    std::array<Var, 2> ears;
    for (int e = 0; e < 2; ++e) {
      const MaskedSeq<Scalar>& raw = canary ? input.canary[e] : input.wavlm[e];
      check_dim(raw, canary ? "canary" : "wavlm");
      const SeqVar h = ops::linear(tape, seq(raw), proj.weight, proj.bias);
      ears[e] = head::trunk(tape, h, tp);
    }
    pooled = fusion::ear_merge_pooled(tape, ears[0], ears[1], affine(bind, "ears"));
  } else {
    const fusion::ProjectionParams proj{affine(bind, "proj.canary"), affine(bind, "proj.wavlm")};
    std::array<fusion::ProjectedPair, 2> pairs;
    for (int e = 0; e < 2; ++e) {
      check_dim(input.canary[e], "canary");
      check_dim(input.wavlm[e], "wavlm");
      pairs[e] = fusion::project(tape, seq(input.canary[e]), seq(input.wavlm[e]), proj);
    }
    if (kind == FusionKind::pool_late) {
      const head::TrunkParams tc = trunk_params(bind, "trunk_canary");
      const head::TrunkParams tw = trunk_params(bind, "trunk_wavlm");
      const fusion::Affine fuse = affine(bind, "fuse");
      std::array<Var, 2> ears;
      for (int e = 0; e < 2; ++e) {
        const Var zc = head::trunk(tape, pairs[e].canary, tc);
        const Var zw = head::trunk(tape, pairs[e].wavlm, tw);
        ears[e] = fusion::pool_late_fuse(tape, zc, zw, fuse);
      }
      pooled = fusion::ear_merge_pooled(tape, ears[0], ears[1], affine(bind, "ears"));
    } else {
      std::array<SeqVar, 2> fused;
      for (int e = 0; e < 2; ++e) {
        switch (kind) {
          case FusionKind::frame_aligned: {
            fusion::FrameAlignParams fp;
            if (c.fusion.prep == Prep::conv) fp.conv = affine(bind, "prep");
            fp.fuse = affine(bind, "fuse");
            fused[e] = fusion::frame_align_fuse(tape, pairs[e], c.fusion.prep, c.fusion.shift_steps, fp);
            break;
          }
          case FusionKind::cross_attn:
          case FusionKind::reverse_cross_attn: {
            const fusion::CrossAttnParams xp{affine(bind, "xattn.query"), affine(bind, "xattn.key"),
                                             affine(bind, "xattn.value"), affine(bind, "fuse")};
            const auto dir = kind == FusionKind::cross_attn ? fusion::AttnDirection::canary_queries_wavlm
                                                            : fusion::AttnDirection::wavlm_queries_canary;
            fused[e] = fusion::cross_attn_fuse(tape, pairs[e], dir, xp);
            break;
          }
          case FusionKind::reverse_linear:
          case FusionKind::reverse_tconv: {
            fusion::ReverseAlignParams rp;
            if (kind == FusionKind::reverse_tconv) rp.tconv = affine(bind, "prep");
            rp.fuse = affine(bind, "fuse");
            const auto mode =
                kind == FusionKind::reverse_linear ? fusion::ReverseMode::linear : fusion::ReverseMode::tconv;
            fused[e] = fusion::reverse_align_fuse(tape, pairs[e], mode, rp);
            break;
          }
          default:
            throw ConfigError("forward: unhandled fusion kind");
        }
      }
      const SeqVar merged = fusion::ear_merge_sequence(tape, fused[0], fused[1], affine(bind, "ears"));
      pooled = head::trunk(tape, merged, trunk_params(bind, "trunk"));
    }
  }

  const head::AdapterParams ap{bind("severity.embedding"), affine(bind, "severity.down"),
                               affine(bind, "severity.up")};
  const Var adapted = head::severity_adapt(tape, pooled, input.severity, ap);
  const head::OutputParams op{affine(bind, "output.hidden"), affine(bind, "output.back"),
                              affine(bind, "output.final")};
  return head::predict_logit(tape, adapted, op);
}

template <typename Scalar>
double predict_score(Model<Scalar>& model, const UtteranceInput<Scalar>& input) {
  Tape<Scalar> tape;
  const Var r = forward_logit(tape, model, input);
  return head::score_from_logit(static_cast<double>(tape.value(r)(0, 0)));
}

template <typename Scalar>
ParamCount count_params(const Model<Scalar>& model) {
  ParamCount pc;
  for (const auto& [name, t] : model.params.tensors()) {
    if (!t.trainable) continue;
    const auto n = static_cast<std::int64_t>(t.value.size());
    pc.total += n;
    pc.by_block[block_of(name)] += n;
  }
  return pc;
}

ParamCount count_params(const ModelConfig& config) {
  config.validate();
  ParamCount pc;
  for (const ParamSpec& s : param_specs(config)) {
    const auto n = static_cast<std::int64_t>(s.rows * s.cols);
    pc.total += n;
    pc.by_block[block_of(s.name)] += n;
  }
  return pc;
}

template Model<float> init_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> init_model<double>(const ModelConfig&, std::uint64_t);
template Var forward_logit<float>(Tape<float>&, Model<float>&, const UtteranceInput<float>&);
template Var forward_logit<double>(Tape<double>&, Model<double>&, const UtteranceInput<double>&);
template double predict_score<float>(Model<float>&, const UtteranceInput<float>&);
template double predict_score<double>(Model<double>&, const UtteranceInput<double>&);
template ParamCount count_params<float>(const Model<float>&);
template ParamCount count_params<double>(const Model<double>&);

}  // namespace sipfuse
