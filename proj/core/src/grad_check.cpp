#include "sipfuse/grad_check.hpp"

#include "sipfuse/errors.hpp"

#include <algorithm>
#include <cmath>

namespace sipfuse {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& [_, e] : max_rel_error) w = std::max(w, e);
  return w;
}

namespace {

double evaluate(ParamStore<double>& params, const LossClosure& loss) {
  Tape<double> tape;
  const Var root = loss(tape, params);
  const double v = tape.value(root)(0, 0);
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(ParamStore<double>& params, const LossClosure& loss, double step,
                           Index max_entries_per_param) {
  GradCheckReport report;
  params.zero_grad();
  double loss_value = 0.0;
  {
    Tape<double> tape;
    const Var root = loss(tape, params);
    loss_value = tape.value(root)(0, 0);
    if (!std::isfinite(loss_value)) throw NumericError("grad_check: non-finite loss");
    tape.backward(root);
  }
  const double floor = 1e-6 * std::max(1.0, std::abs(loss_value));
  for (auto& [name, tensor] : params.tensors()) {
    if (!tensor.has_grad()) {
      report.skipped.push_back(name);
      continue;
    }
    if (!tensor.grad.allFinite()) throw NumericError("grad_check: non-finite gradient for '" + name + "'");
    const Mat<double> analytic = tensor.grad;
    const Index n = tensor.value.size();
    const Index stride = (max_entries_per_param > 0 && n > max_entries_per_param)
                             ? (n + max_entries_per_param - 1) / max_entries_per_param
                             : 1;
    double max_diff = 0.0;
    double max_num = 0.0;
    for (Index i = 0; i < n; i += stride) {
      double& slot = tensor.value.data()[i];
      const double saved = slot;
      slot = saved + step;
      const double up = evaluate(params, loss);
      slot = saved - step;
      const double down = evaluate(params, loss);
      slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      max_diff = std::max(max_diff, std::abs(analytic.data()[i] - numeric));
      max_num = std::max(max_num, std::abs(numeric));
    }
    report.max_rel_error[name] = max_diff / std::max(max_num, floor);
  }
  return report;
}

}  // namespace sipfuse
