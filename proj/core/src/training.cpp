#include "sipfuse/training.hpp"

#include "binary_io.hpp"
#include "sipfuse/errors.hpp"
#include "sipfuse/ops.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace sipfuse {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (folds < 2) throw ConfigError("train: folds must be >= 2");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},         {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
                     {"clip_norm", c.clip_norm}, {"epochs", c.epochs},   {"seed", c.seed},
                     {"folds", c.folds}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  static const std::set<std::string> known = {"lr", "weight_decay", "batch_size", "clip_norm",
                                              "epochs", "seed", "folds"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("train: unknown key '" + key + "'");
  }
  try {
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
}

double mse_loss(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.empty()) throw ArgumentError("mse_loss: empty batch");
  if (scores.size() != labels.size()) throw ArgumentError("mse_loss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = scores[i] / 100.0 - labels[i] / 100.0;
    acc += d * d;
  }
  return acc / static_cast<double>(scores.size());
}

template <typename Scalar>
Var mse_loss(Tape<Scalar>& tape, const std::vector<Var>& logits, const std::vector<double>& labels) {
  if (logits.empty()) throw ArgumentError("mse_loss: empty batch");
  if (logits.size() != labels.size()) throw ArgumentError("mse_loss: size mismatch");
  Var total{};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!(labels[i] >= 0.0 && labels[i] <= 100.0)) throw ArgumentError("mse_loss: target outside [0, 100]");
    const Var diff = ops::add_scalar(tape, ops::sigmoid(tape, logits[i]), static_cast<Scalar>(-labels[i] / 100.0));
    const Var sq = ops::square(tape, diff);
    total = i == 0 ? sq : ops::add(tape, total, sq);
  }
  return ops::scale(tape, total, static_cast<Scalar>(1.0 / static_cast<double>(logits.size())));
}

template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, AdamState<Scalar>& state, double lr, double weight_decay,
                const AdamHyper& hyper) {
  for (const auto& [name, t] : params.tensors()) {
    if (t.has_grad() && !t.grad.allFinite()) {
      throw NumericError("adamw: non-finite gradient in '" + name + "'");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(hyper.beta1);
  const auto b2 = static_cast<Scalar>(hyper.beta2);
  const auto decay = static_cast<Scalar>(lr * weight_decay);
  const auto step_size = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(hyper.eps);
  const auto inv_bc1 = static_cast<Scalar>(1.0 / bc1);
  const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
  for (auto& [name, t] : params.tensors()) {
    if (!t.trainable) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() == 0) {
      m = Mat<Scalar>::Zero(t.value.rows(), t.value.cols());
      v = Mat<Scalar>::Zero(t.value.rows(), t.value.cols());
    }
    if (t.has_grad()) {
      m = b1 * m + (Scalar(1) - b1) * t.grad;
      v = b2 * v + (Scalar(1) - b2) * t.grad.cwiseProduct(t.grad);
    } else {
      m = b1 * m;
      v = b2 * v;
    }
    t.value -= decay * t.value;
    t.value.array() -= step_size * (m.array() * inv_bc1) / ((v.array() * inv_bc2).sqrt() + eps);
  }
}

template <typename Scalar>
double grad_norm(const ParamStore<Scalar>& params) {
  double acc = 0.0;
  for (const auto& [_, t] : params.tensors()) {
    if (t.has_grad()) acc += t.grad.template cast<double>().squaredNorm();
  }
  return std::sqrt(acc);
}

template <typename Scalar>
double clip_gradients(ParamStore<Scalar>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& [_, t] : params.tensors()) {
      if (t.has_grad()) t.grad *= factor;
    }
  }
  return norm;
}

int FoldPlan::fold(const std::string& token) const {
  const auto it = fold_of.find(token);
  if (it == fold_of.end()) throw DataError("fold plan: unknown scene token '" + token + "'");
  return it->second;
}

FoldPlan grouped_kfold(const std::vector<std::string>& scene_tokens, int folds, std::uint64_t seed) {
  if (folds < 1) throw ArgumentError("grouped_kfold: folds must be >= 1");
  std::vector<std::string> tokens(scene_tokens.begin(), scene_tokens.end());
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  if (static_cast<int>(tokens.size()) < folds) {
    throw ArgumentError("grouped_kfold: " + std::to_string(tokens.size()) + " scene tokens for " +
                        std::to_string(folds) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(tokens.begin(), tokens.end(), rng);
  FoldPlan plan;
  plan.folds = folds;
  for (std::size_t i = 0; i < tokens.size(); ++i) plan.fold_of[tokens[i]] = static_cast<int>(i % folds);
  return plan;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},
                     {"train_loss", r.train_loss},
                     {"val_rmse", r.val_rmse},
                     {"max_grad_norm", r.max_grad_norm},
                     {"max_clipped_norm", r.max_clipped_norm},
                     {"steps", r.steps}};
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(tag)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double rmse_of(const std::vector<double>& pred, const std::vector<const Item*>& items) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - items[i]->row.label;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

}  // namespace

std::vector<double> predict(Model<float>& model, const std::vector<const Item*>& items) {
  std::vector<double> out;
  out.reserve(items.size());
  for (const Item* item : items) out.push_back(predict_score(model, item->input));
  return out;
}

FoldResult train_fold(const std::vector<const Item*>& train_items, const std::vector<const Item*>& val_items,
                      const ModelConfig& model_config, const TrainConfig& train, std::uint64_t stream,
                      const TrainLog& log) {
  train.validate();
  model_config.validate();
  if (train_items.empty()) throw ArgumentError("train_fold: empty training set");
  if (val_items.empty()) throw ArgumentError("train_fold: empty validation set");

  Model<float> model = init_model<float>(model_config, derive_seed(train.seed, stream, 0));
  AdamState<float> adam;
  FoldResult result;
  double best = std::numeric_limits<double>::infinity();
  ParamStore<float> best_params;

  std::vector<std::size_t> order(train_items.size());
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(train.seed, stream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      model.params.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Item& item = *train_items[order[b]];
        Tape<float> tape;
        const Var r = forward_logit(tape, model, item.input);
        const Var diff = ops::add_scalar(tape, ops::sigmoid(tape, r), static_cast<float>(-item.row.label / 100.0));
        const Var sq = ops::square(tape, diff);
        const double item_loss = tape.value(sq)(0, 0);
        if (!std::isfinite(item_loss)) {
          throw NumericError("train_fold: non-finite loss on '" + item.row.utterance_id + "'");
        }
        loss_sum += item_loss;
        tape.backward(ops::scale(tape, sq, inv_batch));
      }
      const double norm = clip_gradients(model.params, train.clip_norm);
      rec.max_grad_norm = std::max(rec.max_grad_norm, norm);
      rec.max_clipped_norm = std::max(rec.max_clipped_norm, grad_norm(model.params));
      adamw_step(model.params, adam, train.lr, train.weight_decay);
      ++rec.steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_rmse = rmse_of(predict(model, val_items), val_items);
    if (!std::isfinite(rec.val_rmse)) throw NumericError("train_fold: non-finite validation RMSE");
    if (rec.val_rmse < best) {
      best = rec.val_rmse;
      best_params = model.params;
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "stream %llu epoch %d loss %.6f val_rmse %.4f",
                    static_cast<unsigned long long>(stream), epoch, rec.train_loss, rec.val_rmse);
      log(buf);
    }
  }

  for (auto& [_, t] : best_params.tensors()) t.grad.resize(0, 0);
  result.checkpoint.model = Model<float>{model_config, std::move(best_params)};
  result.checkpoint.metadata = {{"seed", train.seed},
                                {"stream", stream},
                                {"best_epoch", result.best_epoch},
                                {"best_val_rmse", best},
                                {"train_items", train_items.size()},
                                {"val_items", val_items.size()}};
  return result;
}

std::string format_predictions(const Predictions& p) {
  if (p.ids.size() != p.scores.size()) throw ArgumentError("predictions: id/score size mismatch");
  std::string out = "utterance_id,score\n";
  char buf[64];
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", p.scores[i]);
    out += p.ids[i] + "," + buf + "\n";
  }
  return out;
}

Predictions parse_predictions(const std::string& text, const std::string& context) {
  std::istringstream in(text);
  std::string line;
  Predictions p;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "utterance_id,score") throw DataError(context + ": missing header");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw DataError(context + " line " + std::to_string(line_no) + ": expected 2 fields");
    }
    double v = 0.0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
      throw DataError(context + " line " + std::to_string(line_no) + ": malformed score");
    }
    p.ids.push_back(line.substr(0, comma));
    p.scores.push_back(v);
  }
  if (!header) throw DataError(context + ": missing header");
  return p;
}

void write_predictions(const std::string& path, const Predictions& p) {
  const std::string text = format_predictions(p);
  const auto* b = reinterpret_cast<const std::byte*>(text.data());
  detail::write_file_atomic(path, std::vector<std::byte>(b, b + text.size()));
}

Predictions read_predictions(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return parse_predictions(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

std::vector<double> fold_average(const std::vector<std::vector<double>>& fold_scores) {
  if (fold_scores.empty()) throw ArgumentError("fold_average: no fold predictions");
  const std::size_t n = fold_scores.front().size();
  std::vector<double> out(n, 0.0);
  for (const auto& f : fold_scores) {
    if (f.size() != n) throw ArgumentError("fold_average: fold prediction lengths differ");
    for (std::size_t i = 0; i < n; ++i) out[i] += f[i];
  }
  for (double& v : out) v /= static_cast<double>(fold_scores.size());
  return out;
}

std::vector<std::vector<double>> seed_ensemble(std::vector<std::vector<Checkpoint>>& checkpoints, int folds,
                                               const std::vector<const Item*>& items) {
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < checkpoints.size(); ++s) {
    if (static_cast<int>(checkpoints[s].size()) != folds) {
      throw DataError("seed_ensemble: seed #" + std::to_string(s) + " has " +
                      std::to_string(checkpoints[s].size()) + " checkpoints, expected " + std::to_string(folds));
    }
    std::vector<std::vector<double>> per_fold;
    for (Checkpoint& c : checkpoints[s]) per_fold.push_back(predict(c.model, items));
    out.push_back(fold_average(per_fold));
  }
  return out;
}

Predictions uniform_score_average(const Predictions& a, const Predictions& b) {
  if (a.ids.size() != a.scores.size() || b.ids.size() != b.scores.size()) {
    throw ArgumentError("uniform_score_average: id/score size mismatch");
  }
  if (a.ids != b.ids) {
    const std::set<std::string> sa(a.ids.begin(), a.ids.end());
    const std::set<std::string> sb(b.ids.begin(), b.ids.end());
    std::vector<std::string> diff;
    std::set_symmetric_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(diff));
    std::string msg = "uniform_score_average: item lists differ";
    if (diff.empty()) {
      msg += " in order or multiplicity";
    } else {
      msg += " (symmetric difference " + std::to_string(diff.size()) + ":";
      for (std::size_t i = 0; i < diff.size() && i < 10; ++i) msg += " " + diff[i];
      msg += diff.size() > 10 ? " ...)" : ")";
    }
    throw DataError(msg);
  }
  Predictions out{a.ids, std::vector<double>(a.scores.size())};
  for (std::size_t i = 0; i < a.scores.size(); ++i) out.scores[i] = (a.scores[i] + b.scores[i]) / 2.0;
  return out;
}

CrossValResult cross_validate(const std::vector<Item>& items, const ModelConfig& model_config,
                              const TrainConfig& train, const std::vector<std::uint64_t>& seeds, int jobs,
                              const TrainLog& log) {
  train.validate();
  model_config.validate();
  if (seeds.empty()) throw ConfigError("cross_validate: no seeds");
  std::vector<const Item*> pool;
  std::vector<std::string> tokens;
  for (const Item& it : items) {
    if (it.row.split == Split::train) {
      pool.push_back(&it);
      tokens.push_back(it.row.scene_token);
    }
  }
  if (pool.empty()) throw DataError("cross_validate: no train-split items");

  CrossValResult cv;
  for (std::uint64_t seed : seeds) {
    cv.plans[seed] = grouped_kfold(tokens, train.folds, seed);
    for (int f = 0; f < train.folds; ++f) cv.runs.push_back({seed, f, {}});
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  const auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= cv.runs.size()) return;
      auto& run = cv.runs[k];
      try {
        const FoldPlan& plan = cv.plans.at(run.seed);
        std::vector<const Item*> tr;
        std::vector<const Item*> va;
        for (const Item* it : pool) (plan.fold(it->row.scene_token) == run.fold ? va : tr).push_back(it);
        TrainConfig cfg = train;
        cfg.seed = run.seed;
        TrainLog fold_log;
        if (log) {
          fold_log = [&, prefix = "seed " + std::to_string(run.seed) + " fold " + std::to_string(run.fold) + ": "](
                         const std::string& m) {
            std::lock_guard<std::mutex> lock(log_mutex);
            log(prefix + m);
          };
        }
        run.result = train_fold(tr, va, model_config, cfg, static_cast<std::uint64_t>(run.fold), fold_log);
        run.result.checkpoint.metadata["fold"] = run.fold;
      } catch (...) {
        std::lock_guard<std::mutex> lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = cv.runs.size();
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(cv.runs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return cv;
}

template Var mse_loss<float>(Tape<float>&, const std::vector<Var>&, const std::vector<double>&);
template Var mse_loss<double>(Tape<double>&, const std::vector<Var>&, const std::vector<double>&);
template void adamw_step<float>(ParamStore<float>&, AdamState<float>&, double, double, const AdamHyper&);
template void adamw_step<double>(ParamStore<double>&, AdamState<double>&, double, double, const AdamHyper&);
template double grad_norm<float>(const ParamStore<float>&);
template double grad_norm<double>(const ParamStore<double>&);
template double clip_gradients<float>(ParamStore<float>&, double);
template double clip_gradients<double>(ParamStore<double>&, double);

}  // namespace sipfuse
