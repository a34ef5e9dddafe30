#pragma once

#include "sipfuse/tape.hpp"
#include "sipfuse/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace sipfuse {

/// Builds a scalar (1x1) loss on a fresh tape from the given parameters.
using LossClosure = std::function<Var(Tape<double>&, ParamStore<double>&)>;

struct GradCheckReport {
  /// Per trainable parameter: max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, floor),
  /// floor = 1e-6 * max(1, |loss|).
  std::map<std::string, double> max_rel_error;
  /// Parameters without a gradient slot (frozen inputs).
  std::vector<std::string> skipped;

  [[nodiscard]] double worst() const;
  [[nodiscard]] bool passed(double tolerance) const { return worst() <= tolerance; }
};

/// Compares reverse-mode gradients against central finite differences.
///
/// `max_entries_per_param` > 0 limits the number of probed entries per
/// tensor (evenly strided) for large models; 0 probes every entry.
/// Throws NumericError when the loss or any gradient is non-finite.
GradCheckReport grad_check(ParamStore<double>& params, const LossClosure& loss, double step = 1e-5,
                           Index max_entries_per_param = 0);

}  // namespace sipfuse
