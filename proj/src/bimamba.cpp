#include "pidnet/bimamba.hpp"

#include <cmath>
#include <stdexcept>

namespace pidnet::bimamba {

ScanParams ScanParams::passthrough(std::size_t channels) {
  ScanParams p;
  p.log_decay = Tensor(channels, 1, -800.0);
  p.w_in = Tensor(channels, channels, 0.0);
  p.w_out = Tensor(channels, channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    p.w_in(c, c) = 1.0;
    p.w_out(c, c) = 1.0;
  }
  p.skip = Tensor(channels, 1, 0.0);
  return p;
}

ScanParams ScanParams::random(std::size_t channels, RngState& rng) {
  ScanParams p;
  p.log_decay = Tensor(channels, 1);
  for (double& v : p.log_decay.data()) v = rng.normal(0.0, 1.0);
  p.w_in = init_normal(channels, channels, static_cast<double>(channels), rng);
  p.w_out = init_normal(channels, channels, static_cast<double>(channels), rng);
  p.skip = Tensor(channels, 1);
  for (double& v : p.skip.data()) v = rng.normal(0.0, 1.0);
  return p;
}

namespace {

ScanVars constants(ad::Tape& tape, const ScanParams& p) {
  return {tape.constant(p.log_decay), tape.constant(p.w_in), tape.constant(p.w_out), tape.constant(p.skip)};
}

}  // namespace

Tensor ssm_scan(const Tensor& x, const ScanParams& p) {
  ad::Tape tape(false);
  return ssm_scan(tape.constant(x), constants(tape, p)).value();
}

Tensor bimamba_unit(const Tensor& x, const ScanParams& fwd, const ScanParams& bwd) {
  ad::Tape tape(false);
  return bimamba_unit(tape.constant(x), constants(tape, fwd), constants(tape, bwd)).value();
}

Tensor bimamba_stack(const Tensor& x, std::span<const UnitParams> units) {
  if (units.empty()) throw std::invalid_argument("bimamba_stack: need at least one unit");
  Tensor y = x;
  for (const auto& u : units) y = bimamba_unit(y, u.fwd, u.bwd);
  return y;
}

ad::Var decay_scan(ad::Var u, ad::Var log_decay) {
  const Tensor& uv = u.value();
  const Tensor& av = log_decay.value();
  if (av.size() != uv.channels()) {
    throw ShapeError("decay_scan: decay " + av.shape() + " incompatible with input " + uv.shape());
  }
  const std::size_t t_len = uv.time();
  Tensor h(uv.channels(), t_len);
  for (std::size_t c = 0; c < uv.channels(); ++c) {
    const double lambda = sigmoid(av[c]);
    double state = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      state = lambda * state + (1.0 - lambda) * uv(c, t);
      h(c, t) = state;
    }
  }
  return u.tape()->record(std::move(h), {u, log_decay}, [u, log_decay](ad::Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& uv = tp.value(u);
    const Tensor& hv = tp.value(self);
    const Tensor& av = tp.value(log_decay);
    const std::size_t t_len = uv.time();
    const bool need_u = tp.requires_grad(u), need_a = tp.requires_grad(log_decay);
    for (std::size_t c = 0; c < uv.channels(); ++c) {
      const double lambda = sigmoid(av[c]);
      double carry = 0.0;  // dL/dh_t including every later step
      double g_lambda = 0.0;
      for (std::size_t t = t_len; t-- > 0;) {
        carry = g(c, t) + lambda * carry;
        if (need_u) tp.grad(u)(c, t) += (1.0 - lambda) * carry;
        const double prev = t == 0 ? 0.0 : hv(c, t - 1);
        g_lambda += carry * (prev - uv(c, t));
      }
      if (need_a) tp.grad(log_decay)[c] += g_lambda * lambda * (1.0 - lambda);
    }
  });
}

ad::Var ssm_scan(ad::Var x, const ScanVars& p) {
  ad::Var u = ad::linear(x, p.w_in);
  ad::Var h = decay_scan(u, p.log_decay);
  return ad::add(ad::linear(h, p.w_out), ad::scale_channels(x, p.skip));
}

ad::Var bimamba_unit(ad::Var x, const ScanVars& fwd, const ScanVars& bwd) {
  ad::Var forward = ssm_scan(x, fwd);
  ad::Var backward = ad::flip(ssm_scan(ad::flip(x), bwd));
  return ad::scale(ad::add(forward, backward), 0.5);
}

BiMambaStack::BiMambaStack(std::string prefix, std::size_t channels, std::size_t depth, bool tied)
    : prefix_(std::move(prefix)), channels_(channels), depth_(depth), tied_(tied) {
  if (depth_ < 1) throw std::invalid_argument("Bi-Mamba depth must be >= 1, got " + std::to_string(depth_));
}

std::string BiMambaStack::param_name(std::size_t unit, bool backward, const std::string& field) const {
  return prefix_ + ".unit" + std::to_string(unit) + (backward ? ".bwd." : ".fwd.") + field;
}

void BiMambaStack::init(ParamStore& store, RngState& rng) const {
  const double decay_logit = std::log(0.9 / 0.1);
  const double fan_in = static_cast<double>(channels_);
  for (std::size_t n = 0; n < depth_; ++n) {
    for (bool backward : {false, true}) {
      if (backward && tied_) continue;
      store.add(param_name(n, backward, "log_decay"), Tensor(channels_, 1, decay_logit));
      store.add(param_name(n, backward, "w_in"), init_normal(channels_, channels_, fan_in, rng));
      store.add(param_name(n, backward, "w_out"), init_normal(channels_, channels_, fan_in, rng));
      store.add(param_name(n, backward, "skip"), Tensor(channels_, 1, 1.0));
    }
  }
}

ScanVars BiMambaStack::vars(ad::Tape& tape, const ParamStore& store, std::size_t unit, bool backward) const {
  const bool b = backward && !tied_;
  return {tape.param(store, param_name(unit, b, "log_decay")), tape.param(store, param_name(unit, b, "w_in")),
          tape.param(store, param_name(unit, b, "w_out")), tape.param(store, param_name(unit, b, "skip"))};
}

ad::Var BiMambaStack::forward(ad::Tape& tape, const ParamStore& store, ad::Var x) const {
  if (x.channels() != channels_) {
    throw ShapeError("Bi-Mamba stack expects " + std::to_string(channels_) + " channels, got " + x.value().shape());
  }
  ad::Var y = x;
  for (std::size_t n = 0; n < depth_; ++n) {
    y = bimamba_unit(y, vars(tape, store, n, false), vars(tape, store, n, true));
  }
  return y;
}

Tensor BiMambaStack::forward(const ParamStore& store, const Tensor& x) const {
  ad::Tape tape(false);
  return forward(tape, store, tape.constant(x)).value();
}

}  // namespace pidnet::bimamba
