#pragma once

#include "sipfuse/data.hpp"
#include "sipfuse/model.hpp"

#include <array>
#include <string>
#include <vector>

namespace sipfuse {

/// sqrt(mean((pred - target)^2)). Throws ArgumentError on empty or mismatched input.
double rmse(const std::vector<double>& pred, const std::vector<double>& target);
/// mean(|pred - target|).
double mae(const std::vector<double>& pred, const std::vector<double>& target);

struct PearsonResult {
  double value = 0.0;
  bool degenerate = false;  // one side has zero variance; value is 0
};

/// Centered covariance over the product of standard deviations. Throws
/// ArgumentError when fewer than two pairs are given.
PearsonResult pearson(const std::vector<double>& pred, const std::vector<double>& target);

struct MetricsReport {
  double rmse = 0.0;
  double corr = 0.0;
  double mae = 0.0;
  int n = 0;
  bool corr_degenerate = false;
};

/// Correlation of a single item is reported as degenerate rather than an error.
MetricsReport compute_metrics(const std::vector<double>& pred, const std::vector<double>& target);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one value
};

MeanStd mean_std(const std::vector<double>& values);

struct SeedSummary {
  MeanStd rmse;
  MeanStd corr;
  MeanStd mae;
  int seeds = 0;
};

SeedSummary summarize_seeds(const std::vector<MetricsReport>& per_seed);

/// Per-group metrics for one predictor (and optionally a second one compared
/// against it as the baseline).
struct GroupReport {
  std::vector<std::string> keys;
  std::vector<MetricsReport> baseline;
  std::vector<MetricsReport> candidate;  // empty for single-predictor reports
  MetricsReport macro_baseline;          // unweighted mean over groups; n = total items
  MetricsReport macro_candidate;
  /// Per group: candidate strictly better on rmse, corr, mae.
  std::vector<std::array<bool, 3>> wins;
  int wins_rmse = 0;
  int wins_corr = 0;
  int wins_mae = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] int groups() const { return static_cast<int>(keys.size()); }
};

/// Groups by listener severity in mild, moderate, moderately_severe order;
/// absent severities are omitted with a warning.
GroupReport severity_report(const std::vector<double>& preds, const std::vector<ManifestRow>& rows);

/// Groups by system_id (sorted) and compares `preds_b` against the baseline
/// `preds_a`. Groups with fewer than two items get a degenerate-correlation
/// warning.
GroupReport system_report(const std::vector<double>& preds_a, const std::vector<double>& preds_b,
                          const std::vector<ManifestRow>& rows);

/// Delimited-text rendering: key,n,rmse,corr,mae[,rmse_b,corr_b,mae_b,win_rmse,win_corr,win_mae]
/// followed by a macro row and, for comparisons, a wins row.
std::string format_group_report(const GroupReport& report);

inline const std::vector<int> kDefaultShiftSteps = {-4, -2, -1, 0, 1, 2, 4};

struct ShiftRow {
  int steps = 0;
  int shift_ms = 0;
  MetricsReport metrics;
};

/// Re-evaluates a frame_aligned model with the prepared fine stream shifted
/// by each delta. The model's own shift setting is restored afterwards.
/// Throws ConfigError for other variants.
std::vector<ShiftRow> shift_sweep(Model<float>& model, const std::vector<const Item*>& items,
                                  const std::vector<int>& deltas = kDefaultShiftSteps);

}  // namespace sipfuse
