#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pidnet/autodiff.hpp"
#include "pidnet/grad_check.hpp"
#include "pidnet/rng.hpp"
#include "pidnet/tensor.hpp"

namespace pidnet::testing {

inline Tensor random_tensor(std::size_t c, std::size_t t, RngState& rng, double scale = 1.0) {
  Tensor x(c, t);
  for (double& v : x.data()) v = scale * rng.normal();
  return x;
}

inline Tensor random_tensor(std::size_t c, std::size_t t, std::uint64_t seed, double scale = 1.0) {
  RngState rng(seed);
  return random_tensor(c, t, rng, scale);
}

inline ::testing::AssertionResult tensors_near(const Tensor& a, const Tensor& b, double tol) {
  if (!a.same_shape(b)) {
    return ::testing::AssertionFailure() << "shape " << a.shape() << " vs " << b.shape();
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(std::abs(a[i] - b[i]) <= tol)) {
      return ::testing::AssertionFailure() << "index " << i << ": " << a[i] << " vs " << b[i] << " (tol " << tol << ")";
    }
  }
  return ::testing::AssertionSuccess();
}

using VarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Max relative error between tape gradients and central differences of
/// L = sum(w * f(inputs)) with fixed random weights w.
inline double op_grad_error(const VarFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed,
                            double h = 1e-5) {
  Tensor weights;
  {
    ad::Tape probe(false);
    std::vector<ad::Var> vars;
    for (const auto& x : inputs) vars.push_back(probe.constant(x));
    const Tensor out = f(probe, vars).value();
    weights = random_tensor(out.channels(), out.time(), seed ^ 0x5bd1e995ULL);
  }
  auto value = [&](const std::vector<Tensor>& xs) {
    ad::Tape tape(false);
    std::vector<ad::Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return ad::dot_const(f(tape, vars), weights).value()[0];
  };
  ad::Tape tape(true);
  std::vector<ad::Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  ad::Var loss = ad::dot_const(f(tape, vars), weights);
  tape.backward(loss);

  double worst = 0.0;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor analytic = tape.grad_or_zero(vars[k]);
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double up = value(xs);
      xs[k][i] = orig - h;
      const double down = value(xs);
      xs[k][i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace pidnet::testing
