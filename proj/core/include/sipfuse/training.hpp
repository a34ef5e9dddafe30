#pragma once

#include "sipfuse/checkpoint.hpp"
#include "sipfuse/data.hpp"
#include "sipfuse/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace sipfuse {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-3;
  int batch_size = 64;
  double clip_norm = 1.0;
  int epochs = 5;
  std::uint64_t seed = 1;
  int folds = 5;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Mean over the batch of (score/100 - label/100)^2 with scores on the 0-100
/// scale. Throws ArgumentError on an empty or mismatched batch.
double mse_loss(const std::vector<double>& scores, const std::vector<double>& labels);

/// Differentiable form on logits: mean over the batch of (sigmoid(r) - y/100)^2.
template <typename Scalar>
Var mse_loss(Tape<Scalar>& tape, const std::vector<Var>& logits, const std::vector<double>& labels);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::map<std::string, Mat<Scalar>> m;
  std::map<std::string, Mat<Scalar>> v;
  std::int64_t step = 0;
};

/// One AdamW update on every trainable tensor of `params` using its grad slot
/// (a missing slot counts as zero). Decoupled decay theta -= lr*wd*theta is
/// applied separately from the bias-corrected adaptive step. Throws
/// NumericError without modifying anything when a gradient is non-finite.
template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, AdamState<Scalar>& state, double lr, double weight_decay,
                const AdamHyper& hyper = {});

/// Global L2 norm over all trainable gradients.
template <typename Scalar>
double grad_norm(const ParamStore<Scalar>& params);

/// Rescales all gradients by max_norm/norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename Scalar>
double clip_gradients(ParamStore<Scalar>& params, double max_norm = 1.0);

/// Scene token -> fold index.
struct FoldPlan {
  int folds = 0;
  std::map<std::string, int> fold_of;

  [[nodiscard]] int fold(const std::string& token) const;
};

/// Unique tokens (sorted, then shuffled by `seed`) assigned round-robin to
/// `folds` folds. Throws ArgumentError when there are fewer tokens than folds.
FoldPlan grouped_kfold(const std::vector<std::string>& scene_tokens, int folds, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_rmse = 0.0;
  double max_grad_norm = 0.0;  // before clipping
  double max_clipped_norm = 0.0;
  int steps = 0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct FoldResult {
  Checkpoint checkpoint;  // parameters of the selected epoch
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

using TrainLog = std::function<void(const std::string&)>;

/// Trains one model. `stream` separates independent runs sharing a seed
/// (e.g. the fold index); initialization and the per-epoch shuffles are
/// derived from (train.seed, stream). Selects the epoch with the lowest
/// validation RMSE on the 0-100 scale, earliest on ties.
FoldResult train_fold(const std::vector<const Item*>& train_items, const std::vector<const Item*>& val_items,
                      const ModelConfig& model_config, const TrainConfig& train, std::uint64_t stream = 0,
                      const TrainLog& log = {});

/// Scores on the 0-100 scale, one per item.
std::vector<double> predict(Model<float>& model, const std::vector<const Item*>& items);

/// Utterance-level predictions.
struct Predictions {
  std::vector<std::string> ids;
  std::vector<double> scores;
};

std::string format_predictions(const Predictions& p);
Predictions parse_predictions(const std::string& text, const std::string& context = "predictions");
void write_predictions(const std::string& path, const Predictions& p);
Predictions read_predictions(const std::string& path);

/// Per item, the arithmetic mean of the fold models' scores.
/// `fold_scores[f][i]` is fold f's score for item i.
std::vector<double> fold_average(const std::vector<std::vector<double>>& fold_scores);

/// Seed-level ensembles: `checkpoints[s]` holds the fold models of seed s and
/// must contain exactly `folds` entries. Returns per-seed item scores.
std::vector<std::vector<double>> seed_ensemble(std::vector<std::vector<Checkpoint>>& checkpoints, int folds,
                                               const std::vector<const Item*>& items);

/// Per item (a + b) / 2. Throws DataError when the id lists differ, naming
/// the symmetric difference.
Predictions uniform_score_average(const Predictions& a, const Predictions& b);

/// Grouped k-fold x seeds protocol over the train split.
struct CrossValResult {
  struct Run {
    std::uint64_t seed = 0;
    int fold = 0;
    FoldResult result;
  };
  std::vector<Run> runs;  // seed-major, fold-minor
  std::map<std::uint64_t, FoldPlan> plans;
};

/// Runs train_fold for every (seed, fold); `jobs` > 1 trains runs
/// concurrently. The result does not depend on `jobs`.
CrossValResult cross_validate(const std::vector<Item>& items, const ModelConfig& model_config,
                              const TrainConfig& train, const std::vector<std::uint64_t>& seeds, int jobs = 1,
                              const TrainLog& log = {});

}  // namespace sipfuse
