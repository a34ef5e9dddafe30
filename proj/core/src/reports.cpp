#include "sipfuse/errors.hpp"
#include "sipfuse/eval.hpp"

#include <cstdio>
#include <map>

namespace sipfuse {

namespace {

MetricsReport macro_of(const std::vector<MetricsReport>& groups) {
  MetricsReport m;
  if (groups.empty()) return m;
  for (const auto& g : groups) {
    m.rmse += g.rmse;
    m.corr += g.corr;
    m.mae += g.mae;
    m.n += g.n;
    m.corr_degenerate = m.corr_degenerate || g.corr_degenerate;
  }
  const auto k = static_cast<double>(groups.size());
  m.rmse /= k;
  m.corr /= k;
  m.mae /= k;
  return m;
}

struct Grouped {
  std::vector<std::string> keys;
  std::vector<std::vector<std::size_t>> members;
};

GroupReport build(const Grouped& g, const std::vector<double>& a, const std::vector<double>* b,
                  const std::vector<ManifestRow>& rows) {
  GroupReport rep;
  for (std::size_t k = 0; k < g.keys.size(); ++k) {
    const auto& idx = g.members[k];
    std::vector<double> pa;
    std::vector<double> pb;
    std::vector<double> y;
    for (std::size_t i : idx) {
      pa.push_back(a[i]);
      if (b != nullptr) pb.push_back((*b)[i]);
      y.push_back(rows[i].label);
    }
    rep.keys.push_back(g.keys[k]);
    rep.baseline.push_back(compute_metrics(pa, y));
    if (rep.baseline.back().corr_degenerate) {
      rep.warnings.push_back("group '" + g.keys[k] + "': degenerate correlation");
    }
    if (b != nullptr) {
      const MetricsReport mb = compute_metrics(pb, y);
      const MetricsReport& ma = rep.baseline.back();
      const std::array<bool, 3> w = {mb.rmse < ma.rmse, mb.corr > ma.corr, mb.mae < ma.mae};
      rep.wins_rmse += w[0];
      rep.wins_corr += w[1];
      rep.wins_mae += w[2];
      rep.wins.push_back(w);
      rep.candidate.push_back(mb);
    }
  }
  rep.macro_baseline = macro_of(rep.baseline);
  rep.macro_candidate = macro_of(rep.candidate);
  return rep;
}

}  // namespace

GroupReport severity_report(const std::vector<double>& preds, const std::vector<ManifestRow>& rows) {
  if (preds.size() != rows.size()) throw ArgumentError("severity_report: prediction/row count mismatch");
  Grouped g;
  std::vector<std::string> missing;
  for (int s = 0; s < kSeverityCount; ++s) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<int>(rows[i].severity) == s) idx.push_back(i);
    }
    const std::string key(to_string(static_cast<Severity>(s)));
    if (idx.empty()) {
      missing.push_back(key);
      continue;
    }
    g.keys.push_back(key);
    g.members.push_back(std::move(idx));
  }
  GroupReport rep = build(g, preds, nullptr, rows);
  for (const auto& k : missing) rep.warnings.push_back("group '" + k + "' is empty and omitted");
  return rep;
}

GroupReport system_report(const std::vector<double>& preds_a, const std::vector<double>& preds_b,
                          const std::vector<ManifestRow>& rows) {
  if (preds_a.size() != rows.size() || preds_b.size() != rows.size()) {
    throw ArgumentError("system_report: prediction/row count mismatch");
  }
  std::map<std::string, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < rows.size(); ++i) by[rows[i].system_id].push_back(i);
  Grouped g;
  for (auto& [k, v] : by) {
    g.keys.push_back(k);
    g.members.push_back(std::move(v));
  }
  return build(g, preds_a, &preds_b, rows);
}

std::string format_group_report(const GroupReport& r) {
  const bool cmp = !r.candidate.empty();
  std::string out = cmp ? "group,n,rmse_a,corr_a,mae_a,rmse_b,corr_b,mae_b,win_rmse,win_corr,win_mae\n"
                        : "group,n,rmse,corr,mae\n";
  char buf[256];
  const auto row = [&](const std::string& key, const MetricsReport& a, const MetricsReport* b,
                       const std::array<bool, 3>* w) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f,%.4f", key.c_str(), a.n, a.rmse, a.corr, a.mae);
    out += buf;
    if (b != nullptr) {
      std::snprintf(buf, sizeof(buf), ",%.4f,%.4f,%.4f", b->rmse, b->corr, b->mae);
      out += buf;
      if (w != nullptr) {
        std::snprintf(buf, sizeof(buf), ",%d,%d,%d", (*w)[0], (*w)[1], (*w)[2]);
        out += buf;
      } else {
        out += ",,,";
      }
    }
    out += '\n';
  };
  for (int k = 0; k < r.groups(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    row(r.keys[i], r.baseline[i], cmp ? &r.candidate[i] : nullptr, cmp ? &r.wins[i] : nullptr);
  }
  row("macro", r.macro_baseline, cmp ? &r.macro_candidate : nullptr, nullptr);
  if (cmp) {
    std::snprintf(buf, sizeof(buf), "wins,%d,,,,,,,%d/%d,%d/%d,%d/%d\n", r.groups(), r.wins_rmse, r.groups(),
                  r.wins_corr, r.groups(), r.wins_mae, r.groups());
    out += buf;
  }
  return out;
}

std::vector<ShiftRow> shift_sweep(Model<float>& model, const std::vector<const Item*>& items,
                                  const std::vector<int>& deltas) {
  if (model.config.fusion.kind != FusionKind::frame_aligned) {
    throw ConfigError("shift_sweep: variant '" + std::string(to_string(model.config.fusion.kind)) +
                      "' is not frame_aligned");
  }
  if (items.empty()) throw ArgumentError("shift_sweep: no items");
  std::vector<double> y;
  for (const Item* it : items) y.push_back(it->row.label);
  const int original = model.config.fusion.shift_steps;
  std::vector<ShiftRow> out;
  try {
    for (int d : deltas) {
      model.config.fusion.shift_steps = d;
      std::vector<double> p;
      p.reserve(items.size());
      for (const Item* it : items) p.push_back(predict_score(model, it->input));
      out.push_back({d, d * kShiftStepMs, compute_metrics(p, y)});
    }
  } catch (...) {
    model.config.fusion.shift_steps = original;
    throw;
  }
  model.config.fusion.shift_steps = original;
  return out;
}

}  // namespace sipfuse
