#include "sipfuse_cli/cli.hpp"

#include "sipfuse_cli/run_config.hpp"

#include <sipfuse/checkpoint.hpp>
#include <sipfuse/checksum.hpp>
#include <sipfuse/data.hpp>
#include <sipfuse/errors.hpp>
#include <sipfuse/eval.hpp>
#include <sipfuse/training.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace sipfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<Split> kReportSplits = {Split::dev, Split::eval};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw DataError("write failed for '" + p.string() + "'");
  }
  fs::rename(tmp, p);
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("'" + dir.string() + "' exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("output directory '" + dir.string() + "' exists; pass --force to overwrite");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

fs::path seed_dir(const fs::path& run, std::uint64_t seed) { return run / ("seed" + std::to_string(seed)); }
fs::path fold_dir(const fs::path& run, std::uint64_t seed, int fold) {
  return seed_dir(run, seed) / ("fold" + std::to_string(fold));
}
std::string pred_name(Split s) { return "pred_" + std::string(to_string(s)) + ".csv"; }

struct Dataset {
  Manifest manifest;
  std::vector<Item> items;
};

Dataset load_dataset(const DataPaths& paths) {
  const std::string manifest_path = resolve_data_path(paths, paths.manifest);
  const std::string cache_path = resolve_data_path(paths, paths.cache);
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const auto records = read_cache(cache_path);
  ds.items = assemble_items(ds.manifest, records);
  return ds;
}

std::vector<const Item*> split_items(const std::vector<Item>& items, Split s) {
  std::vector<const Item*> out;
  for (const Item& it : items) {
    if (it.row.split == s) out.push_back(&it);
  }
  return out;
}

Predictions to_predictions(const std::vector<const Item*>& items, const std::vector<double>& scores) {
  Predictions p;
  for (std::size_t i = 0; i < items.size(); ++i) {
    p.ids.push_back(items[i]->row.utterance_id);
    p.scores.push_back(scores[i]);
  }
  return p;
}

struct LabelIndex {
  std::map<std::string, const ManifestRow*> by_id;

  explicit LabelIndex(const Manifest& m) {
    for (const auto& r : m.rows) by_id[r.utterance_id] = &r;
  }
  std::vector<ManifestRow> rows_for(const Predictions& p, const std::string& context) const {
    std::vector<ManifestRow> out;
    for (const auto& id : p.ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError(context + ": id '" + id + "' not in manifest");
      out.push_back(*it->second);
    }
    return out;
  }
};

std::vector<double> labels_of(const std::vector<ManifestRow>& rows) {
  std::vector<double> y;
  for (const auto& r : rows) y.push_back(r.label);
  return y;
}

// ---------------------------------------------------------------------------

int cmd_synth(int n, std::uint64_t seed, const std::string& profile, std::string out_dir, int feature_dim,
              int min_folds, bool force, std::ostream& out) {
  if (out_dir.empty()) out_dir = data_root(DataPaths{});
  SynthOptions opt;
  opt.feature_dim = feature_dim;
  opt.min_folds = min_folds;
  const SynthProfile prof = parse_profile(profile);
  SynthDataset ds;
  try {
    ds = synth_generate(n, seed, prof, opt);
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  prepare_out_dir(out_dir, force);
  const fs::path dir(out_dir);
  write_cache((dir / "cache.fcache").string(), ds.records);
  write_manifest((dir / "manifest.csv").string(), ds.manifest);

  std::map<Split, int> by_split;
  std::set<std::string> scenes;
  double lo = 100.0;
  double hi = 0.0;
  for (const auto& r : ds.manifest.rows) {
    ++by_split[r.split];
    scenes.insert(r.scene_token);
    lo = std::min(lo, r.label);
    hi = std::max(hi, r.label);
  }
  out << "wrote " << ds.manifest.rows.size() << " items (" << ds.records.size() << " cache records) to "
      << dir.string() << "\n"
      << "profile " << to_string(prof) << ", seed " << seed << ", feature_dim " << feature_dim << ", scenes "
      << scenes.size() << "\n"
      << "split train " << by_split[Split::train] << ", dev " << by_split[Split::dev] << ", eval "
      << by_split[Split::eval] << "\n"
      << "label range " << fmt("%.2f", lo) << " .. " << fmt("%.2f", hi) << "\n";
  return kOk;
}

int cmd_validate_cache(const std::string& cache, const std::string& manifest, std::ostream& out,
                       std::ostream& err) {
  DataPaths paths;
  const std::string cache_path = resolve_data_path(paths, cache);
  const std::string manifest_path = resolve_data_path(paths, manifest);
  const auto records = read_cache(cache_path);
  const Manifest m = read_manifest(manifest_path);
  const auto problems = validate_dataset(m, records);
  std::set<std::string> ids;
  for (const auto& r : m.rows) ids.insert(r.utterance_id);
  int orphans = 0;
  double min_ratio = 1e300;
  double max_ratio = 0.0;
  std::map<std::string, std::array<double, 2>> rates;
  for (const auto& r : records) {
    if (!ids.count(r.utterance_id)) ++orphans;
    rates[r.utterance_id][static_cast<int>(r.backbone)] = r.frame_rate_hz;
  }
  for (const auto& [_, rr] : rates) {
    if (rr[0] > 0.0 && rr[1] > 0.0) {
      min_ratio = std::min(min_ratio, rr[1] / rr[0]);
      max_ratio = std::max(max_ratio, rr[1] / rr[0]);
    }
  }
  for (const auto& p : problems) err << "error: " << p << "\n";
  out << "records " << records.size() << ", manifest rows " << m.rows.size() << ", records without manifest row "
      << orphans << "\n";
  if (max_ratio > 0.0) {
    out << "frame-rate ratio range " << fmt("%.4f", min_ratio) << " .. " << fmt("%.4f", max_ratio) << "\n";
  }
  out << problems.size() << " errors\n";
  return problems.empty() ? kOk : kData;
}

int cmd_params(const std::string& config_path, const std::string& kind, const std::string& prep, int d,
               int input_dim, std::ostream& out) {
  ModelConfig mc;
  if (!config_path.empty()) {
    mc = load_run_config(config_path).model;
  } else {
    json j = {{"kind", kind}};
    if (!prep.empty()) j["prep"] = prep;
    if (d > 0) j["d"] = d;
    if (input_dim > 0) j["input_dim"] = input_dim;
    mc = j.get<ModelConfig>();
  }
  const ParamCount pc = count_params(mc);
  out << "variant " << to_string(mc.fusion.kind);
  if (mc.fusion.prep != Prep::none) out << "(" << to_string(mc.fusion.prep) << ")";
  out << ", d " << mc.head.d << ", input_dim " << mc.input_dim << "\n";
  out << "block,params\n";
  for (const auto& [block, n] : pc.by_block) out << block << "," << n << "\n";
  out << "total," << pc.total << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& run_dir, int jobs, bool force,
              std::ostream& out, std::ostream& err) {
  const std::string raw = read_text(config_path);
  const RunConfig cfg = parse_run_config(raw, config_path);
  const Dataset ds = load_dataset(cfg.data);
  for (const Item& it : ds.items) {
    for (int e = 0; e < 2; ++e) {
      if (it.input.canary[static_cast<std::size_t>(e)].dim() != cfg.model.input_dim ||
          it.input.wavlm[static_cast<std::size_t>(e)].dim() != cfg.model.input_dim) {
        throw DataError("cache feature dim does not match model input_dim " + std::to_string(cfg.model.input_dim) +
                        " (utterance '" + it.row.utterance_id + "')");
      }
    }
  }
  prepare_out_dir(run_dir, force);
  const fs::path run(run_dir);
  write_text(run / "config.json", raw);

  const auto log = [&err](const std::string& m) { err << m << "\n"; };
  const CrossValResult cv = cross_validate(ds.items, cfg.model, cfg.train, cfg.seeds, jobs, log);

  json plans = json::object();
  for (const auto& [seed, plan] : cv.plans) plans[std::to_string(seed)] = plan.fold_of;
  write_text(run / "folds.json", plans.dump(2) + "\n");

  std::map<Split, std::vector<const Item*>> report_items;
  for (Split s : kReportSplits) report_items[s] = split_items(ds.items, s);

  std::map<std::uint64_t, std::map<Split, std::vector<std::vector<double>>>> fold_scores;
  for (const auto& r : cv.runs) {
    const fs::path fdir = fold_dir(run, r.seed, r.fold);
    fs::create_directories(fdir);
    save_checkpoint((fdir / "model.ckpt").string(), r.result.checkpoint);
    json hist = {{"best_epoch", r.result.best_epoch}, {"epochs", r.result.history}};
    write_text(fdir / "history.json", hist.dump(2) + "\n");
    Model<float> model = r.result.checkpoint.model;
    for (Split s : kReportSplits) {
      const auto& items = report_items[s];
      if (items.empty()) continue;
      const auto scores = predict(model, items);
      write_predictions((fdir / pred_name(s)).string(), to_predictions(items, scores));
      fold_scores[r.seed][s].push_back(scores);
    }
  }

  json summary = {{"seeds", cfg.seeds}, {"folds", cfg.train.folds}, {"splits", json::object()}};
  for (Split s : kReportSplits) {
    const auto& items = report_items[s];
    if (items.empty()) continue;
    std::vector<double> y;
    for (const Item* it : items) y.push_back(it->row.label);
    std::vector<MetricsReport> per_seed;
    for (std::uint64_t seed : cfg.seeds) {
      const auto avg = fold_average(fold_scores[seed][s]);
      write_predictions((seed_dir(run, seed) / pred_name(s)).string(), to_predictions(items, avg));
      per_seed.push_back(compute_metrics(avg, y));
    }
    const SeedSummary sum = summarize_seeds(per_seed);
    summary["splits"][std::string(to_string(s))] = {{"n", items.size()},
                                                      {"rmse_mean", sum.rmse.mean},
                                                      {"rmse_std", sum.rmse.std},
                                                      {"corr_mean", sum.corr.mean},
                                                      {"corr_std", sum.corr.std}};
    out << to_string(s) << ": n " << items.size() << ", RMSE " << fmt("%.3f", sum.rmse.mean) << " +- "
        << fmt("%.3f", sum.rmse.std) << ", Corr " << fmt("%.4f", sum.corr.mean) << " +- "
        << fmt("%.4f", sum.corr.std) << "\n";
  }
  write_text(run / "summary.json", summary.dump(2) + "\n");
  out << "run directory " << run.string() << ": " << cv.runs.size() << " checkpoints\n";
  return kOk;
}

struct RunPredictions {
  RunConfig cfg;
  std::vector<Predictions> per_seed;
  Predictions seed_mean;
};

// Loads seed-level predictions for `split`, checking that every fold also
// produced its file.
RunPredictions load_run_predictions(const fs::path& run, Split split) {
  RunPredictions rp;
  rp.cfg = parse_run_config(read_text(run / "config.json"), (run / "config.json").string());
  for (std::uint64_t seed : rp.cfg.seeds) {
    for (int f = 0; f < rp.cfg.train.folds; ++f) {
      const fs::path fp = fold_dir(run, seed, f) / pred_name(split);
      if (!fs::exists(fp)) {
        throw DataError("missing predictions for seed " + std::to_string(seed) + " fold " + std::to_string(f) + " (" +
                        fp.string() + ")");
      }
    }
    const fs::path sp = seed_dir(run, seed) / pred_name(split);
    if (!fs::exists(sp)) {
      throw DataError("missing predictions for seed " + std::to_string(seed) + " (" + sp.string() + ")");
    }
    rp.per_seed.push_back(read_predictions(sp.string()));
    if (rp.per_seed.back().ids != rp.per_seed.front().ids) {
      throw DataError("seed " + std::to_string(seed) + ": prediction ids differ from seed " +
                      std::to_string(rp.cfg.seeds.front()));
    }
  }
  rp.seed_mean.ids = rp.per_seed.front().ids;
  std::vector<std::vector<double>> all;
  for (const auto& p : rp.per_seed) all.push_back(p.scores);
  rp.seed_mean.scores = fold_average(all);
  return rp;
}

std::vector<Checkpoint> load_fold_checkpoints(const fs::path& run, const RunConfig& cfg, std::uint64_t seed) {
  std::vector<Checkpoint> out;
  for (int f = 0; f < cfg.train.folds; ++f) {
    const fs::path p = fold_dir(run, seed, f) / "model.ckpt";
    if (!fs::exists(p)) {
      throw DataError("missing checkpoint for seed " + std::to_string(seed) + " fold " + std::to_string(f));
    }
    out.push_back(load_checkpoint(p.string()));
  }
  return out;
}

std::string run_shift_sweep(const fs::path& run, Split split, const std::vector<int>& deltas) {
  const RunConfig cfg = parse_run_config(read_text(run / "config.json"), (run / "config.json").string());
  if (cfg.model.fusion.kind != FusionKind::frame_aligned) {
    throw ConfigError("shift sweep requires a frame_aligned run; this run is '" +
                      std::string(to_string(cfg.model.fusion.kind)) + "'");
  }
  const Dataset ds = load_dataset(cfg.data);
  const auto items = split_items(ds.items, split);
  if (items.empty()) throw DataError("split '" + std::string(to_string(split)) + "' has no items");
  std::vector<double> y;
  for (const Item* it : items) y.push_back(it->row.label);

  std::map<int, std::vector<MetricsReport>> by_delta;
  for (std::uint64_t seed : cfg.seeds) {
    auto ckpts = load_fold_checkpoints(run, cfg, seed);
    for (int d : deltas) {
      std::vector<std::vector<double>> folds;
      for (auto& c : ckpts) {
        c.model.config.fusion.shift_steps = d;
        folds.push_back(predict(c.model, items));
      }
      by_delta[d].push_back(compute_metrics(fold_average(folds), y));
    }
  }
  std::string text = "shift_steps,shift_ms,rmse_mean,rmse_std,corr_mean,corr_std\n";
  for (int d : deltas) {
    const SeedSummary s = summarize_seeds(by_delta[d]);
    text += std::to_string(d) + "," + std::to_string(d * kShiftStepMs) + "," + fmt("%.4f", s.rmse.mean) + "," +
            fmt("%.4f", s.rmse.std) + "," + fmt("%.4f", s.corr.mean) + "," + fmt("%.4f", s.corr.std) + "\n";
  }
  return text;
}

std::vector<int> parse_deltas(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("invalid shift delta '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("no shift deltas given");
  return out;
}

int cmd_shift_sweep(const std::string& run_dir, const std::string& split, const std::string& deltas,
                    std::ostream& out) {
  const std::string text = run_shift_sweep(run_dir, parse_split(split), parse_deltas(deltas));
  write_text(fs::path(run_dir) / "reports" / ("shift_sweep_" + split + ".csv"), text);
  out << text;
  return kOk;
}

int cmd_evaluate(const std::string& run_dir, const std::string& split_name, const std::vector<std::string>& by,
                 std::string baseline, bool shift_sweep, bool params, std::ostream& out) {
  const fs::path run(run_dir);
  const Split split = parse_split(split_name);
  RunPredictions rp = load_run_predictions(run, split);
  const Manifest manifest = read_manifest(resolve_data_path(rp.cfg.data, rp.cfg.data.manifest));
  const LabelIndex labels(manifest);
  const auto rows = labels.rows_for(rp.seed_mean, "evaluate");
  const auto y = labels_of(rows);

  std::vector<MetricsReport> per_seed;
  for (const auto& p : rp.per_seed) per_seed.push_back(compute_metrics(p.scores, y));
  const SeedSummary s = summarize_seeds(per_seed);
  std::string overall = "split,n,seeds,rmse_mean,rmse_std,corr_mean,corr_std,mae_mean,mae_std\n";
  overall += split_name + "," + std::to_string(y.size()) + "," + std::to_string(s.seeds) + "," +
             fmt("%.4f", s.rmse.mean) + "," + fmt("%.4f", s.rmse.std) + "," + fmt("%.4f", s.corr.mean) + "," +
             fmt("%.4f", s.corr.std) + "," + fmt("%.4f", s.mae.mean) + "," + fmt("%.4f", s.mae.std) + "\n";
  write_text(run / "reports" / ("overall_" + split_name + ".csv"), overall);
  out << overall;

  std::set<std::string> groups(by.begin(), by.end());
  if (by.empty()) {
    if (rp.cfg.analysis.severity) groups.insert("severity");
    if (rp.cfg.analysis.system) groups.insert("system");
  }
  if (baseline.empty()) baseline = rp.cfg.analysis.baseline_run;
  for (const auto& g : groups) {
    GroupReport rep;
    if (g == "severity") {
      rep = severity_report(rp.seed_mean.scores, rows);
    } else if (g == "system") {
      std::vector<double> base = rp.seed_mean.scores;
      if (!baseline.empty()) {
        const RunPredictions bp = load_run_predictions(baseline, split);
        if (bp.seed_mean.ids != rp.seed_mean.ids) throw DataError("baseline run covers different items");
        base = bp.seed_mean.scores;
      }
      rep = system_report(base, rp.seed_mean.scores, rows);
    } else {
      throw ConfigError("unknown grouping '" + g + "' (expected severity or system)");
    }
    const std::string text = format_group_report(rep);
    write_text(run / "reports" / (g + "_" + split_name + ".csv"), text);
    out << "\n" << text;
    for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
  }
  if (shift_sweep || rp.cfg.analysis.shift_sweep) {
    const std::string text = run_shift_sweep(run, split, kDefaultShiftSteps);
    write_text(run / "reports" / ("shift_sweep_" + split_name + ".csv"), text);
    out << "\n" << text;
  }
  if (params) {
    out << "\n";
    std::ostringstream ps;
    const ParamCount pc = count_params(rp.cfg.model);
    ps << "block,params\n";
    for (const auto& [block, n] : pc.by_block) ps << block << "," << n << "\n";
    ps << "total," << pc.total << "\n";
    write_text(run / "reports" / "params.csv", ps.str());
    out << ps.str();
  }
  return kOk;
}

int cmd_ensemble_avg(const std::string& run_a, const std::string& run_b, const std::string& out_dir, bool force,
                     std::ostream& out) {
  std::map<Split, std::pair<RunPredictions, RunPredictions>> loaded;
  for (Split s : kReportSplits) {
    if (!fs::exists(fs::path(run_a) / "config.json")) {
      throw DataError("'" + run_a + "' is not a run directory");
    }
    RunPredictions a;
    RunPredictions b;
    try {
      a = load_run_predictions(run_a, s);
    } catch (const DataError&) {
      continue;
    }
    b = load_run_predictions(run_b, s);
    loaded.emplace(s, std::make_pair(std::move(a), std::move(b)));
  }
  if (loaded.empty()) throw DataError("no predictions found in '" + run_a + "'");
  prepare_out_dir(out_dir, force);
  const fs::path dir(out_dir);
  std::string report = "split,n,rmse_a,corr_a,mae_a,rmse_b,corr_b,mae_b,rmse_avg,corr_avg,mae_avg\n";
  for (auto& [s, ab] : loaded) {
    const Predictions avg = uniform_score_average(ab.first.seed_mean, ab.second.seed_mean);
    write_predictions((dir / pred_name(s)).string(), avg);
    const Manifest manifest = read_manifest(resolve_data_path(ab.first.cfg.data, ab.first.cfg.data.manifest));
    const LabelIndex labels(manifest);
    const auto y = labels_of(labels.rows_for(avg, "ensemble-avg"));
    report += std::string(to_string(s)) + "," + std::to_string(y.size());
    for (const Predictions* p : std::initializer_list<const Predictions*>{&ab.first.seed_mean, &ab.second.seed_mean, &avg}) {
      const MetricsReport m = compute_metrics(p->scores, y);
      report += "," + fmt("%.4f", m.rmse) + "," + fmt("%.4f", m.corr) + "," + fmt("%.4f", m.mae);
    }
    report += "\n";
  }
  write_text(dir / "comparison.csv", report);
  out << report;
  return kOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training and evaluation of speech-intelligibility prediction heads on cached encoder features"};
  app.require_subcommand(1);

  int n = 200;
  std::uint64_t seed = 1;
  std::string profile = "local";
  std::string out_dir;
  int feature_dim = kEncoderDim;
  int min_folds = 1;
  bool force = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted structure");
  synth->add_option("-n,--n-items", n, "Number of utterances")->capture_default_str();
  synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
  synth->add_option("--profile", profile, "Planted label function: global or local")->capture_default_str();
  synth->add_option("-o,--out", out_dir, "Output directory (default: $SIPFUSE_DATA_ROOT)");
  synth->add_option("--feature-dim", feature_dim, "Feature width of the synthetic encoders")->capture_default_str();
  synth->add_option("--min-folds", min_folds, "Refuse n < 2 * min_folds")->capture_default_str();
  synth->add_flag("--force", force, "Overwrite an existing output directory");

  std::string config;
  std::string run_dir;
  int jobs = 1;
  auto* train = app.add_subcommand("train", "Grouped k-fold x seeds training run");
  train->add_option("-c,--config", config, "Run configuration (JSON)")->required();
  train->add_option("-r,--run-dir", run_dir, "Run directory to create")->required();
  train->add_option("-j,--jobs", jobs, "Concurrent fold trainings")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_flag("--force", force, "Overwrite an existing run directory");

  std::string split = "dev";
  std::vector<std::string> by;
  std::string baseline;
  bool shift = false;
  bool params = false;
  auto* evaluate = app.add_subcommand("evaluate", "Metrics and group reports for a run");
  evaluate->add_option("run_dir", run_dir, "Run directory")->required();
  evaluate->add_option("--split", split, "dev or eval")->capture_default_str();
  evaluate->add_option("--by", by, "Group reports: severity, system");
  evaluate->add_option("--baseline", baseline, "Baseline run directory for system win rates");
  evaluate->add_flag("--shift-sweep", shift, "Include the temporal-shift sweep");
  evaluate->add_flag("--params", params, "Include the parameter breakdown");

  std::string run_b;
  auto* ens = app.add_subcommand("ensemble-avg", "Uniform score average of two runs");
  ens->add_option("run_a", run_dir, "First run directory")->required();
  ens->add_option("run_b", run_b, "Second run directory")->required();
  ens->add_option("-o,--out", out_dir, "Output directory")->required();
  ens->add_flag("--force", force, "Overwrite an existing output directory");

  std::string kind = "frame_aligned";
  std::string prep;
  int d = 0;
  int input_dim = 0;
  auto* par = app.add_subcommand("params", "Parameter counts by block");
  par->add_option("-c,--config", config, "Run configuration (JSON); overrides the variant flags");
  par->add_option("--kind", kind, "Fusion kind")->capture_default_str();
  par->add_option("--prep", prep, "Temporal preparation for frame_aligned: avg or conv");
  par->add_option("--d", d, "Model width");
  par->add_option("--input-dim", input_dim, "Encoder feature width");

  std::string deltas = "-4,-2,-1,0,1,2,4";
  auto* sweep = app.add_subcommand("shift-sweep", "Re-evaluate a frame_aligned run under temporal shifts");
  sweep->add_option("run_dir", run_dir, "Run directory")->required();
  sweep->add_option("--split", split, "dev or eval")->capture_default_str();
  sweep->add_option("--deltas", deltas, "Comma-separated shifts in coarse steps")->capture_default_str();

  std::string cache = "cache.fcache";
  std::string manifest = "manifest.csv";
  auto* vc = app.add_subcommand("validate-cache", "Check a cache file against a manifest");
  vc->add_option("--cache", cache, "Cache file (relative to $SIPFUSE_DATA_ROOT)")->capture_default_str();
  vc->add_option("--manifest", manifest, "Manifest file (relative to $SIPFUSE_DATA_ROOT)")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  if (*synth) return cmd_synth(n, seed, profile, out_dir, feature_dim, min_folds, force, out);
  if (*train) return cmd_train(config, run_dir, jobs, force, out, err);
  if (*evaluate) return cmd_evaluate(run_dir, split, by, baseline, shift, params, out);
  if (*ens) return cmd_ensemble_avg(run_dir, run_b, out_dir, force, out);
  if (*par) return cmd_params(config, kind, prep, d, input_dim, out);
  if (*sweep) return cmd_shift_sweep(run_dir, split, deltas, out);
  if (*vc) return cmd_validate_cache(cache, manifest, out, err);
  return kConfig;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ArgumentError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace sipfuse::cli
