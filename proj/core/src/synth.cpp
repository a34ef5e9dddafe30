#include "sipfuse/data.hpp"
#include "sipfuse/errors.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace sipfuse {

// Rows of PlantedModel::directions:
//   0 canary global, 1 wavlm global, 2 relevance (canary), 3 local value (wavlm),
//   4 .. 4+kSynthSystems-1 system signatures (canary).
namespace {
constexpr int kDirCanaryGlobal = 0;
constexpr int kDirWavlmGlobal = 1;
constexpr int kDirRelevance = 2;
constexpr int kDirLocal = 3;
constexpr int kDirSystem = 4;
constexpr int kDirCount = kDirSystem + kSynthSystems;

constexpr double kCanaryRate = 12.5;
constexpr double kWavlmRate = 50.0;
constexpr double kRelevantFraction = 0.3;
constexpr double kGlobalWeight = 0.5;
constexpr double kLabelNoiseStd = 0.04;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Index coarse_of(Index u, Index t_c) { return std::min<Index>(u / 4, t_c - 1); }

}  // namespace

std::string_view to_string(SynthProfile p) { return p == SynthProfile::global ? "global" : "local"; }

SynthProfile parse_profile(std::string_view text) {
  if (text == "global") return SynthProfile::global;
  if (text == "local") return SynthProfile::local;
  throw ConfigError("unknown synthetic profile '" + std::string(text) + "'");
}

namespace {

double latent_score(const PlantedModel& m, double g_c, double g_w, double local_mean, int system, Severity severity) {
  const double local_weight = m.profile == SynthProfile::local ? m.local_weight : 0.0;
  return kGlobalWeight * (g_c + g_w) + local_weight * m.local_scale * local_mean +
         m.severity_offset[static_cast<std::size_t>(severity)] + m.system_bias[static_cast<std::size_t>(system)];
}

double relevant_mean(const std::vector<std::uint8_t>& relevant, const std::vector<double>& value) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < relevant.size(); ++t) {
    if (relevant[t]) {
      sum += value[t];
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace

double planted_label(const PlantedModel& model, const PlantedItem& item, Severity severity) {
  const double z = latent_score(model, item.canary_global, item.wavlm_global,
                                relevant_mean(item.relevant, item.local_value), item.system_index, severity);
  return 100.0 * sigmoid(model.squash * z);
}

SynthDataset synth_generate(int n_items, std::uint64_t seed, SynthProfile profile, const SynthOptions& options) {
  if (options.min_folds < 1) throw ArgumentError("synth: min_folds must be >= 1");
  if (n_items < 2 * options.min_folds) {
    throw ArgumentError("synth: n_items " + std::to_string(n_items) + " too small for " +
                        std::to_string(options.min_folds) + " folds");
  }
  if (options.feature_dim < kDirCount) {
    throw ArgumentError("synth: feature_dim must be >= " + std::to_string(kDirCount));
  }
  if (!(options.noise_std >= 0.0)) throw ArgumentError("synth: noise_std must be >= 0");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthDataset ds;
  PlantedModel& pm = ds.planted;
  pm.profile = profile;
  const int dim = options.feature_dim;
  {
    Mat<double> g(dim, kDirCount);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    Eigen::HouseholderQR<Mat<double>> qr(g);
    const Mat<double> q = qr.householderQ() * Mat<double>::Identity(dim, kDirCount);
    pm.directions = q.transpose();
  }
  pm.severity_offset = {0.4, 0.0, -0.4};
  pm.system_bias.resize(kSynthSystems);
  for (double& b : pm.system_bias) b = -0.6 + 1.2 * unit(rng);

  const int n_scenes = std::min(n_items, std::max(options.min_folds, (n_items + 3) / 4));
  std::vector<Split> scene_split(static_cast<std::size_t>(n_scenes));
  for (Split& s : scene_split) {
    const double u = unit(rng);
    s = u < 0.70 ? Split::train : (u < 0.85 ? Split::dev : Split::eval);
  }

  ds.manifest.metadata = {{"generator", "sipfuse-synth"},
                          {"seed", std::to_string(seed)},
                          {"profile", std::string(to_string(profile))},
                          {"feature_dim", std::to_string(dim)},
                          {"n_items", std::to_string(n_items)}};

  const Mat<float> dirs = pm.directions.cast<float>();
  std::uniform_int_distribution<int> len_c(20, 80);
  std::uniform_int_distribution<int> jitter(-2, 2);
  std::uniform_int_distribution<int> sys_pick(0, kSynthSystems - 1);
  std::uniform_int_distribution<int> sev_pick(0, kSeverityCount - 1);

  ds.records.reserve(static_cast<std::size_t>(n_items) * 4);
  ds.items.reserve(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    PlantedItem it;
    const Index t_c = len_c(rng);
    const Index t_w = 4 * t_c + jitter(rng);
    it.canary_global = normal(rng);
    it.wavlm_global = normal(rng);
    it.system_index = sys_pick(rng);
    const auto severity = static_cast<Severity>(sev_pick(rng));
    it.relevant.resize(static_cast<std::size_t>(t_c));
    it.local_value.resize(static_cast<std::size_t>(t_c));
    bool any = false;
    for (Index t = 0; t < t_c; ++t) {
      it.relevant[static_cast<std::size_t>(t)] = unit(rng) < kRelevantFraction ? 1 : 0;
      any = any || it.relevant[static_cast<std::size_t>(t)];
      it.local_value[static_cast<std::size_t>(t)] = normal(rng);
    }
    if (!any) it.relevant[static_cast<std::size_t>(t_c / 2)] = 1;
    it.label_noise = kLabelNoiseStd * normal(rng);

    char id[64];
    std::snprintf(id, sizeof(id), "syn%llu_%05d", static_cast<unsigned long long>(seed), i);
    char sys[16];
    std::snprintf(sys, sizeof(sys), "E%02d", it.system_index + 1);
    const int scene = static_cast<int>(static_cast<long long>(i) * n_scenes / n_items);
    char scene_id[32];
    std::snprintf(scene_id, sizeof(scene_id), "S%05d", scene);

    for (int ear = 0; ear < 2; ++ear) {
      const float gain = ear == 0 ? 1.0f : static_cast<float>(pm.ear_gain_right);
      Mat<float> c(t_c, dim);
      for (Index t = 0; t < t_c; ++t) {
        const double rel = it.relevant[static_cast<std::size_t>(t)] ? 1.0 : -1.0;
        const auto signal = (pm.global_amp * it.canary_global) * dirs.row(kDirCanaryGlobal).array() +
                            (pm.relevance_amp * rel) * dirs.row(kDirRelevance).array() +
                            pm.system_amp * dirs.row(kDirSystem + it.system_index).array();
        c.row(t) = gain * signal.matrix().cast<float>();
        for (Index k = 0; k < dim; ++k) c(t, k) += static_cast<float>(options.noise_std * normal(rng));
      }
      Mat<float> w(t_w, dim);
      for (Index u = 0; u < t_w; ++u) {
        const double q = it.local_value[static_cast<std::size_t>(coarse_of(u, t_c))];
        const auto signal = (pm.global_amp * it.wavlm_global) * dirs.row(kDirWavlmGlobal).array() +
                            (pm.local_amp * q) * dirs.row(kDirLocal).array();
        w.row(u) = gain * signal.matrix().cast<float>();
        for (Index k = 0; k < dim; ++k) w(u, k) += static_cast<float>(options.noise_std * normal(rng));
      }
      ds.records.push_back(CacheRecord{id, static_cast<Ear>(ear), Backbone::canary, kCanaryRate, std::move(c)});
      ds.records.push_back(CacheRecord{id, static_cast<Ear>(ear), Backbone::wavlm, kWavlmRate, std::move(w)});
    }

    const double z = latent_score(pm, it.canary_global, it.wavlm_global,
                                  relevant_mean(it.relevant, it.local_value), it.system_index, severity);
    ManifestRow row;
    row.utterance_id = id;
    row.scene_token = scene_id;
    row.severity = severity;
    row.system_id = sys;
    row.label = 100.0 * sigmoid(pm.squash * (z + it.label_noise));
    row.split = scene_split[static_cast<std::size_t>(scene)];
    ds.manifest.rows.push_back(std::move(row));
    ds.items.push_back(std::move(it));
  }
  return ds;
}

double planted_oracle_predict(const PlantedModel& model, const UtteranceInput<float>& input) {
  const Mat<double>& dirs = model.directions;
  const double gains[2] = {1.0, model.ear_gain_right};
  const Index t_c = input.canary[0].length();
  const Index t_w = input.wavlm[0].length();
  if (t_c == 0 || t_w == 0) throw ArgumentError("planted_oracle_predict: empty input");

  // Ear-averaged projections, undoing the right-ear gain.
  Mat<double> pc = Mat<double>::Zero(t_c, kDirCount);
  Mat<double> pw = Mat<double>::Zero(t_w, kDirCount);
  for (int e = 0; e < 2; ++e) {
    pc += (input.canary[static_cast<std::size_t>(e)].values.cast<double>() * dirs.transpose()) / (2.0 * gains[e]);
    pw += (input.wavlm[static_cast<std::size_t>(e)].values.cast<double>() * dirs.transpose()) / (2.0 * gains[e]);
  }
  const double g_c = pc.col(kDirCanaryGlobal).mean() / model.global_amp;
  const double g_w = pw.col(kDirWavlmGlobal).mean() / model.global_amp;
  int system = 0;
  pc.middleCols(kDirSystem, kSynthSystems).colwise().mean().maxCoeff(&system);

  std::vector<std::uint8_t> relevant(static_cast<std::size_t>(t_c));
  for (Index t = 0; t < t_c; ++t) relevant[static_cast<std::size_t>(t)] = pc(t, kDirRelevance) > 0.0 ? 1 : 0;
  std::vector<double> value(static_cast<std::size_t>(t_c), 0.0);
  std::vector<int> count(static_cast<std::size_t>(t_c), 0);
  for (Index u = 0; u < t_w; ++u) {
    const auto t = static_cast<std::size_t>(coarse_of(u, t_c));
    value[t] += pw(u, kDirLocal) / model.local_amp;
    ++count[t];
  }
  for (std::size_t t = 0; t < value.size(); ++t) {
    if (count[t] > 0) value[t] /= count[t];
  }
  const double z = latent_score(model, g_c, g_w, relevant_mean(relevant, value), system, input.severity);
  return 100.0 * sigmoid(model.squash * z);
}

}  // namespace sipfuse
