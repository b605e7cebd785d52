#pragma once

#include <cstddef>

#include "pidnet/param_store.hpp"

namespace pidnet {

struct AdamWOptions {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay applied to every trainable entry.
/// Moments live in the ParamStore entries; only the step count lives here.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  const AdamWOptions& options() const { return options_; }
  std::size_t steps() const { return step_; }

  /// theta -= lr * wd * theta; then the bias-corrected Adam update.
  void step(ParamStore& store);

 private:
  AdamWOptions options_;
  std::size_t step_ = 0;
};

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

}  // namespace pidnet
