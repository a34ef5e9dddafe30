#include "testkit.hpp"

#include <sipfuse/errors.hpp>
#include <sipfuse/eval.hpp>
#include <sipfuse/training.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <numeric>

namespace {

using namespace sipfuse;

std::vector<double> uniform_vec(std::mt19937_64& rng, int n, double lo = 0.0, double hi = 100.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Metrics, Examples) {
  EXPECT_EQ(rmse({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(rmse({0, 0}, {3, 4}), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(mae({0, 0}, {3, -4}), 3.5);
  EXPECT_DOUBLE_EQ(pearson({1, 2, 3}, {2, 4, 6}).value, 1.0);
  EXPECT_DOUBLE_EQ(pearson({1, 2, 3}, {3, 2, 1}).value, -1.0);
  EXPECT_THROW(rmse({}, {}), ArgumentError);
  EXPECT_THROW(mae({1}, {1, 2}), ArgumentError);
}

TEST(Metrics, MatchBruteForceFormulas) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = testkit::uniform_int(rng, 2, 60);
    const auto p = uniform_vec(rng, n), y = uniform_vec(rng, n);
    double se = 0, ae = 0;
    for (int i = 0; i < n; ++i) {
      se += (p[i] - y[i]) * (p[i] - y[i]);
      ae += std::abs(p[i] - y[i]);
    }
    EXPECT_NEAR(rmse(p, y), std::sqrt(se / n), 1e-9);
    EXPECT_NEAR(mae(p, y), ae / n, 1e-9);
    EXPECT_NEAR(pearson(p, y).value, brute_pearson(p, y), 1e-9);
    EXPECT_GE(rmse(p, y), mae(p, y));
  }
}

TEST(Pearson, AffineInvarianceAndNegation) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = testkit::uniform_int(rng, 3, 40);
    const auto p = uniform_vec(rng, n), y = uniform_vec(rng, n);
    const double r = pearson(p, y).value;
    const double a = 0.1 + 5.0 * trial / 50.0, b = -20.0 + trial;
    std::vector<double> q(p), neg(p);
    for (int i = 0; i < n; ++i) {
      q[i] = a * p[i] + b;
      neg[i] = -p[i];
    }
    EXPECT_NEAR(pearson(q, y).value, r, 1e-9);
    EXPECT_NEAR(pearson(neg, y).value, -r, 1e-9);
  }
}

TEST(Pearson, DegenerateAndTooShort) {
  const PearsonResult r = pearson({5, 5, 5}, {1, 2, 3});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(pearson({1, 2, 3}, {4, 4, 4}).degenerate);
  EXPECT_THROW(pearson({1}, {1}), ArgumentError);
  const MetricsReport single = compute_metrics({10}, {20});
  EXPECT_TRUE(single.corr_degenerate);
  EXPECT_EQ(single.rmse, 10.0);
  EXPECT_EQ(single.n, 1);
}

TEST(MeanStd, SampleStandardDeviation) {
  const MeanStd m = mean_std({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_DOUBLE_EQ(m.mean, 5.0);
  EXPECT_NEAR(m.std, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(mean_std({3.5}).std, 0.0);
  const SeedSummary s = summarize_seeds({compute_metrics({1, 2, 3}, {1, 2, 4}), compute_metrics({1, 2, 3}, {2, 3, 4})});
  EXPECT_EQ(s.seeds, 2);
  EXPECT_NEAR(s.mae.mean, (1.0 / 3.0 + 1.0) / 2.0, 1e-12);
}

// ---------------------------------------------------------------------------
// group reports

std::vector<ManifestRow> rows_with(const std::vector<Severity>& sev, const std::vector<std::string>& sys,
                                   const std::vector<double>& labels) {
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ManifestRow r;
    r.utterance_id = "u" + std::to_string(i);
    r.severity = sev[i % sev.size()];
    r.system_id = sys[i % sys.size()];
    r.label = labels[i];
    rows.push_back(r);
  }
  return rows;
}

TEST(SeverityReport, SingleSeverityGivesOneGroupWithWarnings) {
  const auto rows = rows_with({Severity::moderate}, {"E01"}, {10, 20, 30});
  const GroupReport r = severity_report({12, 18, 33}, rows);
  ASSERT_EQ(r.groups(), 1);
  EXPECT_EQ(r.keys[0], "moderate");
  EXPECT_EQ(r.baseline[0].n, 3);
  EXPECT_EQ(r.warnings.size(), 2u);
  EXPECT_NEAR(r.macro_baseline.rmse, r.baseline[0].rmse, 1e-15);
}

TEST(SeverityReport, GroupsPartitionItems) {
  std::mt19937_64 rng(3);
  const auto labels = uniform_vec(rng, 50);
  const auto preds = uniform_vec(rng, 50);
  const auto rows = rows_with({Severity::moderately_severe, Severity::mild, Severity::moderate, Severity::mild},
                              {"E01"}, labels);
  const GroupReport r = severity_report(preds, rows);
  ASSERT_EQ(r.groups(), 3);
  EXPECT_EQ(r.keys, (std::vector<std::string>{"mild", "moderate", "moderately_severe"}));
  int total = 0;
  for (const auto& g : r.baseline) total += g.n;
  EXPECT_EQ(total, 50);
  EXPECT_EQ(r.macro_baseline.n, 50);
  EXPECT_NEAR(r.macro_baseline.mae, (r.baseline[0].mae + r.baseline[1].mae + r.baseline[2].mae) / 3.0, 1e-12);
  EXPECT_THROW(severity_report({1.0}, rows), ArgumentError);
}

TEST(SeverityReport, PlantedOffsetsOrderSeverityBlindErrors) {
  const auto ds = synth_generate(600, 4, SynthProfile::local, {16, 1, 0.3});
  std::vector<double> blind;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    blind.push_back(planted_label(ds.planted, ds.items[i], Severity::moderate));
  }
  const GroupReport r = severity_report(blind, ds.manifest.rows);
  ASSERT_EQ(r.groups(), 3);
  // Offsets: mild +, moderate 0, moderately_severe -. The blind predictor is
  // exact up to label noise for the zero-offset group.
  EXPECT_LT(r.baseline[1].mae, r.baseline[0].mae);
  EXPECT_LT(r.baseline[1].mae, r.baseline[2].mae);
}

TEST(SystemReport, IdenticalPredictorsWinNothing) {
  std::mt19937_64 rng(5);
  const auto labels = uniform_vec(rng, 45), a = uniform_vec(rng, 45);
  const auto rows = rows_with({Severity::mild}, {"E01", "E02", "E03"}, labels);
  const GroupReport r = system_report(a, a, rows);
  EXPECT_EQ(r.groups(), 3);
  EXPECT_EQ(r.wins_rmse + r.wins_corr + r.wins_mae, 0);
}

TEST(SystemReport, StrictlyBetterPredictorWinsEverything) {
  std::mt19937_64 rng(6);
  std::vector<std::string> systems;
  for (int s = 1; s <= kSynthSystems; ++s) systems.push_back("E0" + std::to_string(s));
  const auto labels = uniform_vec(rng, 90);
  const auto noise = uniform_vec(rng, 90, -10.0, 10.0);
  std::vector<double> a(90), b(90);
  for (int i = 0; i < 90; ++i) {
    a[i] = labels[i] + noise[i];
    b[i] = labels[i] + 0.5 * noise[i];
  }
  const auto rows = rows_with({Severity::mild}, systems, labels);
  const GroupReport r = system_report(a, b, rows);
  ASSERT_EQ(r.groups(), 9);
  EXPECT_EQ(r.wins_rmse, 9);
  EXPECT_EQ(r.wins_mae, 9);
  EXPECT_EQ(r.wins_corr, 9);
  double macro = 0.0;
  for (const auto& g : r.candidate) macro += g.rmse;
  EXPECT_NEAR(r.macro_candidate.rmse, macro / 9.0, 1e-12);

  const std::string text = format_group_report(r);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 9 + 1 + 1);
  EXPECT_NE(text.find("macro,90,"), std::string::npos);
  EXPECT_NE(text.find("wins,9,,,,,,,9/9,9/9,9/9"), std::string::npos);
}

TEST(SystemReport, SmallGroupWarnsInsteadOfFailing) {
  const auto rows = rows_with({Severity::mild}, {"E01", "E02", "E02"}, {10, 20, 30});
  const GroupReport r = system_report({11, 21, 29}, {10, 20, 30}, rows);
  EXPECT_EQ(r.groups(), 2);
  EXPECT_TRUE(r.baseline[0].corr_degenerate);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(FormatGroupReport, SinglePredictorLayout) {
  const auto rows = rows_with({Severity::mild, Severity::moderate}, {"E01"}, {10, 20, 30, 40});
  const std::string text = format_group_report(severity_report({10, 20, 30, 40}, rows));
  EXPECT_EQ(text.substr(0, text.find('\n')), "group,n,rmse,corr,mae");
  EXPECT_NE(text.find("mild,2,0.0000,1.0000,0.0000"), std::string::npos) << text;
}

// ---------------------------------------------------------------------------
// shift sweep

TEST(ShiftSweep, CenterMatchesPlainPredictionAndRestoresShift) {
  const auto ds = synth_generate(12, 5, SynthProfile::local, {16, 1, 0.3});
  const auto items = assemble_items(ds.manifest, ds.records);
  std::vector<const Item*> ptrs;
  std::vector<double> labels;
  for (const Item& it : items) {
    ptrs.push_back(&it);
    labels.push_back(it.row.label);
  }
  auto m = init_model<float>(testkit::small_config(FusionKind::frame_aligned, Prep::conv, 16, 4), 2);
  const MetricsReport plain = compute_metrics(predict(m, ptrs), labels);
  const auto rows = shift_sweep(m, ptrs);
  ASSERT_EQ(rows.size(), kDefaultShiftSteps.size());
  for (const auto& r : rows) {
    EXPECT_EQ(r.shift_ms, r.steps * 80);
    if (r.steps == 0) {
      EXPECT_EQ(r.metrics.rmse, plain.rmse);
      EXPECT_EQ(r.metrics.corr, plain.corr);
      EXPECT_EQ(r.metrics.mae, plain.mae);
    }
  }
  EXPECT_EQ(m.config.fusion.shift_steps, 0);

  m.config.fusion.shift_steps = 2;
  const auto shifted = shift_sweep(m, ptrs, {2});
  EXPECT_EQ(shifted[0].metrics.rmse, compute_metrics(predict(m, ptrs), labels).rmse);
  EXPECT_EQ(m.config.fusion.shift_steps, 2);
}

TEST(ShiftSweep, RejectsOtherVariants) {
  auto m = init_model<float>(testkit::small_config(FusionKind::pool_late, Prep::none, 16, 4), 2);
  EXPECT_THROW(shift_sweep(m, {}), ConfigError);
}

}  // namespace
