#include "sipfuse/errors.hpp"
#include "sipfuse/eval.hpp"

#include <algorithm>
#include <cmath>

namespace sipfuse {

namespace {
void check_pair(const std::vector<double>& pred, const std::vector<double>& target, std::size_t min_len,
                const char* op) {
  if (pred.size() != target.size()) throw ArgumentError(std::string(op) + ": length mismatch");
  if (pred.size() < min_len) {
    throw ArgumentError(std::string(op) + ": needs at least " + std::to_string(min_len) + " values");
  }
}
}  // namespace

double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
  check_pair(pred, target, 1, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

double mae(const std::vector<double>& pred, const std::vector<double>& target) {
  check_pair(pred, target, 1, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

PearsonResult pearson(const std::vector<double>& pred, const std::vector<double>& target) {
  check_pair(pred, target, 2, "pearson");
  const auto n = static_cast<double>(pred.size());
  double mp = 0.0;
  double mt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mt += target[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0.0;
  double vp = 0.0;
  double vt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp;
    const double b = target[i] - mt;
    cov += a * b;
    vp += a * a;
    vt += b * b;
  }
  if (vp <= 0.0 || vt <= 0.0) return {0.0, true};
  const double r = cov / std::sqrt(vp * vt);
  return {std::clamp(r, -1.0, 1.0), false};
}

MetricsReport compute_metrics(const std::vector<double>& pred, const std::vector<double>& target) {
  MetricsReport m;
  m.rmse = rmse(pred, target);
  m.mae = mae(pred, target);
  m.n = static_cast<int>(pred.size());
  if (pred.size() >= 2) {
    const PearsonResult p = pearson(pred, target);
    m.corr = p.value;
    m.corr_degenerate = p.degenerate;
  } else {
    m.corr_degenerate = true;
  }
  return m;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("mean_std: no values");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return out;
}

SeedSummary summarize_seeds(const std::vector<MetricsReport>& per_seed) {
  std::vector<double> r;
  std::vector<double> c;
  std::vector<double> a;
  for (const auto& m : per_seed) {
    r.push_back(m.rmse);
    c.push_back(m.corr);
    a.push_back(m.mae);
  }
  return {mean_std(r), mean_std(c), mean_std(a), static_cast<int>(per_seed.size())};
}

}  // namespace sipfuse
