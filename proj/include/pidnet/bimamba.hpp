#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pidnet/autodiff.hpp"
#include "pidnet/param_store.hpp"
#include "pidnet/rng.hpp"
#include "pidnet/tensor.hpp"

// Bidirectional state-space branch. Each direction is a diagonal linear
// recurrence with sigmoid-parameterized decay:
//   u_t = W_in x_t
//   h_t = lambda * h_{t-1} + (1 - lambda) * u_t,  h_{-1} = 0, lambda = sigmoid(a)
//   y_t = W_out h_t + d * x_t
namespace pidnet::bimamba {

/// Parameters of one scan direction over C channels.
struct ScanParams {
  Tensor log_decay;  // C x 1, lambda = sigmoid(log_decay)
  Tensor w_in;       // C x C
  Tensor w_out;      // C x C
  Tensor skip;       // C x 1

  /// lambda ~ 0 (memoryless), identity mixes, no skip: y == x.
  static ScanParams passthrough(std::size_t channels);
  static ScanParams random(std::size_t channels, RngState& rng);
};

/// Causal scan of one direction.
Tensor ssm_scan(const Tensor& x, const ScanParams& p);
/// 0.5 * (scan_fwd(x) + flip(scan_bwd(flip(x)))).
Tensor bimamba_unit(const Tensor& x, const ScanParams& fwd, const ScanParams& bwd);

struct UnitParams {
  ScanParams fwd;
  ScanParams bwd;
};
/// Sequential composition of N >= 1 units.
Tensor bimamba_stack(const Tensor& x, std::span<const UnitParams> units);

/// Differentiable core recurrence h_t = lambda h_{t-1} + (1 - lambda) u_t.
ad::Var decay_scan(ad::Var u, ad::Var log_decay);

struct ScanVars {
  ad::Var log_decay, w_in, w_out, skip;
};
ad::Var ssm_scan(ad::Var x, const ScanVars& p);
ad::Var bimamba_unit(ad::Var x, const ScanVars& fwd, const ScanVars& bwd);

/// Parameterized stack of N units stored under `prefix`. With `tied`, the
/// backward scans reuse the forward parameters (used to test flip
/// equivariance).
class BiMambaStack {
 public:
  BiMambaStack() = default;
  BiMambaStack(std::string prefix, std::size_t channels, std::size_t depth, bool tied = false);

  /// Decay logit(0.9), W ~ Normal(0, 1/C), skip gain 1.
  void init(ParamStore& store, RngState& rng) const;
  ad::Var forward(ad::Tape& tape, const ParamStore& store, ad::Var x) const;
  Tensor forward(const ParamStore& store, const Tensor& x) const;

  std::string param_name(std::size_t unit, bool backward, const std::string& field) const;
  std::size_t depth() const { return depth_; }

 private:
  ScanVars vars(ad::Tape& tape, const ParamStore& store, std::size_t unit, bool backward) const;

  std::string prefix_;
  std::size_t channels_ = 0;
  std::size_t depth_ = 1;
  bool tied_ = false;
};

}  // namespace pidnet::bimamba
