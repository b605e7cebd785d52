#include "pidnet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pidnet {

void AdamW::step(ParamStore& store) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);
  for (ParamEntry& e : store.entries()) {
    if (!e.trainable) continue;
    if (e.grad.size() != e.value.size()) e.grad = Tensor(e.value.channels(), e.value.time(), 0.0);
    if (e.moment1.size() != e.value.size()) e.moment1 = Tensor(e.value.channels(), e.value.time(), 0.0);
    if (e.moment2.size() != e.value.size()) e.moment2 = Tensor(e.value.channels(), e.value.time(), 0.0);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      double& theta = e.value[i];
      theta -= options_.lr * options_.weight_decay * theta;
      e.moment1[i] = options_.beta1 * e.moment1[i] + (1.0 - options_.beta1) * g;
      e.moment2[i] = options_.beta2 * e.moment2[i] + (1.0 - options_.beta2) * g * g;
      const double m_hat = e.moment1[i] / correction1;
      const double v_hat = e.moment2[i] / correction2;
      theta -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  const double norm = store.grad_norm();
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (ParamEntry& e : store.entries()) {
      if (!e.trainable) continue;
      for (double& g : e.grad.data()) g *= scale;
    }
  }
  return norm;
}

}  // namespace pidnet
