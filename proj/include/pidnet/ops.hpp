#pragma once

#include <span>
#include <vector>

#include "pidnet/rng.hpp"
#include "pidnet/tensor.hpp"

namespace pidnet {

enum class Mode { train, eval };
enum class Activation { sigmoid, gelu };

constexpr double kNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

/// out[c,t] = sum_i weight[c,i] * x[i,t] + bias[c]. `bias` is C_out x 1.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Same without a bias term.
Tensor linear(const Tensor& x, const Tensor& weight);

/// Depthwise "same" convolution: zero padding of (k-1)/2 per side and
/// cross-correlation orientation (no kernel flip). `kernels` is C x k, k odd.
Tensor dwconv1d(const Tensor& x, const Tensor& kernels);

/// Numerically stable softmax. Throws on empty input.
std::vector<double> softmax(std::span<const double> v);

double sigmoid(double z);
/// Exact GELU: 0.5 z (1 + erf(z / sqrt 2)).
double gelu(double z);
double gelu_derivative(double z);
Tensor activation(const Tensor& x, Activation kind);

/// Per time step normalization across channels with biased variance.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = kNormEps);

/// Running statistics of a batch-norm layer (C x 1 each).
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, 1, 0.0), running_var(channels, 1, 1.0) {}
};

/// Batch normalization over every (sample, time) position of each channel.
/// Train mode normalizes with batch statistics (biased variance) and moves the
/// running statistics toward the batch mean / unbiased variance with momentum
/// 0.1. Eval mode uses only the running statistics; before any train update
/// those are mean 0 and variance 1.
std::vector<Tensor> batchnorm(const std::vector<Tensor>& batch, const Tensor& gain,
                              const Tensor& shift, BatchNormState& state, Mode mode,
                              double eps = kNormEps);

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// otherwise 1/(1-rate).
Tensor dropout_mask(std::size_t channels, std::size_t time, double rate, RngState& rng);
/// Identity in eval mode or when rate == 0; otherwise x * dropout_mask.
Tensor dropout(const Tensor& x, double rate, Mode mode, RngState& rng);

/// Stride-2 temporal mean over pairs; an odd trailing element passes through.
Tensor temporal_avg_pool(const Tensor& x);
/// Mean over time, returned as C x 1.
Tensor global_avg_pool(const Tensor& x);

/// out[c,t] = x[c, T-1-t].
Tensor flip(const Tensor& x);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
Tensor transpose(const Tensor& x);

}  // namespace pidnet
