#include "pidnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pidnet/errors.hpp"

namespace pidnet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(ParamStore& store, const LossWithGrad& with_grad,
                           const LossValue& value_only, double h) {
  store.zero_grads();
  const double base = with_grad(store);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is non-finite at the base point");

  GradCheckReport report;
  for (auto& entry : store.entries()) {
    if (!entry.trainable) continue;
    GradCheckEntry result;
    result.name = entry.name;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + h;
      const double plus = value_only(store);
      entry.value[i] = saved - h;
      const double minus = value_only(store);
      entry.value[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite loss when perturbing " + entry.name + "[" +
                           std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = entry.grad[i];
      const double err = relative_error(analytic, numeric);
      if (i == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
    if (report.worst_param.empty() || result.max_rel_error > report.max_rel_error) {
      report.max_rel_error = result.max_rel_error;
      report.worst_param = entry.name;
    }
    report.per_param.push_back(std::move(result));
  }
  return report;
}

}  // namespace pidnet
