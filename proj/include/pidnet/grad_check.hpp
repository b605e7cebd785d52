#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pidnet/param_store.hpp"

namespace pidnet {

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<GradCheckEntry> per_param;
};

/// `with_grad` evaluates the loss and adds its gradient into the store's
/// gradient buffers (they are zeroed beforehand). `value_only` evaluates the
/// same loss without gradients. Both must be deterministic.
using LossWithGrad = std::function<double(ParamStore&)>;
using LossValue = std::function<double(const ParamStore&)>;

/// Compares analytic gradients of every trainable element against central
/// differences with step h. Throws NumericError naming the parameter if the
/// loss is non-finite.
GradCheckReport grad_check(ParamStore& store, const LossWithGrad& with_grad,
                           const LossValue& value_only, double h = 1e-5);

}  // namespace pidnet
