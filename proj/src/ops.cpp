#include "pidnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pidnet {

namespace {

void check_linear_shapes(const Tensor& x, const Tensor& weight) {
  if (weight.time() != x.channels()) {
    throw ShapeError("linear: weight " + weight.shape() + " incompatible with input " + x.shape());
  }
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight) {
  check_linear_shapes(x, weight);
  const std::size_t c_out = weight.channels();
  const std::size_t c_in = weight.time();
  const std::size_t t_len = x.time();
  Tensor out(c_out, t_len, 0.0);
  for (std::size_t c = 0; c < c_out; ++c) {
    double* o = out.row(c).data();
    for (std::size_t i = 0; i < c_in; ++i) {
      const double w = weight(c, i);
      if (w == 0.0) continue;
      const double* xi = x.row(i).data();
      for (std::size_t t = 0; t < t_len; ++t) o[t] += w * xi[t];
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (bias.size() != weight.channels()) {
    throw ShapeError("linear: bias " + bias.shape() + " incompatible with weight " + weight.shape());
  }
  Tensor out = linear(x, weight);
  for (std::size_t c = 0; c < out.channels(); ++c) {
    for (double& v : out.row(c)) v += bias[c];
  }
  return out;
}

Tensor dwconv1d(const Tensor& x, const Tensor& kernels) {
  const std::size_t k = kernels.time();
  if (k % 2 == 0) throw std::invalid_argument("dwconv1d: kernel size must be odd, got " + std::to_string(k));
  if (kernels.channels() != x.channels()) {
    throw ShapeError("dwconv1d: kernels " + kernels.shape() + " incompatible with input " + x.shape());
  }
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto t_len = static_cast<std::ptrdiff_t>(x.time());
  Tensor out(x.channels(), x.time(), 0.0);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto xr = x.row(c);
    auto orow = out.row(c);
    for (std::ptrdiff_t t = 0; t < t_len; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - pad;
        if (src >= 0 && src < t_len) s += kernels(c, j) * xr[static_cast<std::size_t>(src)];
      }
      orow[static_cast<std::size_t>(t)] = s;
    }
  }
  return out;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (double& o : out) o /= z;
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)); }

double gelu_derivative(double z) {
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * kInvSqrt2Pi * std::exp(-0.5 * z * z);
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  switch (kind) {
    case Activation::sigmoid:
      for (double& v : out.data()) v = sigmoid(v);
      break;
    case Activation::gelu:
      for (double& v : out.data()) v = gelu(v);
      break;
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const std::size_t c_len = x.channels();
  if (c_len < 1) throw ShapeError("layernorm: needs at least one channel");
  if (gain.size() != c_len || shift.size() != c_len) {
    throw ShapeError("layernorm: gain " + gain.shape() + " / shift " + shift.shape() +
                     " incompatible with input " + x.shape());
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
  Tensor out(c_len, x.time());
  for (std::size_t t = 0; t < x.time(); ++t) {
    double mean = 0.0;
    for (std::size_t c = 0; c < c_len; ++c) mean += x(c, t);
    mean /= static_cast<double>(c_len);
    double var = 0.0;
    for (std::size_t c = 0; c < c_len; ++c) var += (x(c, t) - mean) * (x(c, t) - mean);
    var /= static_cast<double>(c_len);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < c_len; ++c) out(c, t) = gain[c] * (x(c, t) - mean) * inv + shift[c];
  }
  return out;
}

std::vector<Tensor> batchnorm(const std::vector<Tensor>& batch, const Tensor& gain,
                              const Tensor& shift, BatchNormState& state, Mode mode,
                              double eps) {
  if (batch.empty()) throw std::invalid_argument("batchnorm: empty batch");
  const std::size_t c_len = batch.front().channels();
  for (const auto& x : batch) {
    if (x.channels() != c_len) throw ShapeError("batchnorm: inconsistent channel counts in batch");
  }
  if (gain.size() != c_len || shift.size() != c_len || state.running_mean.size() != c_len) {
    throw ShapeError("batchnorm: parameter shapes incompatible with " + std::to_string(c_len) + " channels");
  }
  std::vector<double> mean(c_len), var(c_len);
  if (mode == Mode::train) {
    std::size_t count = 0;
    for (const auto& x : batch) count += x.time();
    if (count < 2) throw std::invalid_argument("batchnorm: train mode needs at least 2 positions per channel");
    const double n = static_cast<double>(count);
    for (std::size_t c = 0; c < c_len; ++c) {
      double s = 0.0;
      for (const auto& x : batch)
        for (double v : x.row(c)) s += v;
      mean[c] = s / n;
      double ss = 0.0;
      for (const auto& x : batch)
        for (double v : x.row(c)) ss += (v - mean[c]) * (v - mean[c]);
      var[c] = ss / n;
      state.running_mean[c] = (1.0 - kBatchNormMomentum) * state.running_mean[c] + kBatchNormMomentum * mean[c];
      state.running_var[c] = (1.0 - kBatchNormMomentum) * state.running_var[c] +
                             kBatchNormMomentum * var[c] * n / (n - 1.0);
    }
  } else {
    for (std::size_t c = 0; c < c_len; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (const auto& x : batch) {
    Tensor y(c_len, x.time());
    for (std::size_t c = 0; c < c_len; ++c) {
      const double inv = 1.0 / std::sqrt(var[c] + eps);
      for (std::size_t t = 0; t < x.time(); ++t) y(c, t) = gain[c] * (x(c, t) - mean[c]) * inv + shift[c];
    }
    out.push_back(std::move(y));
  }
  return out;
}

Tensor dropout_mask(std::size_t channels, std::size_t time, double rate, RngState& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  Tensor mask(channels, time, 1.0);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

Tensor dropout(const Tensor& x, double rate, Mode mode, RngState& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  Tensor mask = dropout_mask(x.channels(), x.time(), rate, rng);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] *= x[i];
  return mask;
}

Tensor temporal_avg_pool(const Tensor& x) {
  if (x.time() < 1) throw ShapeError("temporal_avg_pool: empty sequence");
  const std::size_t out_len = (x.time() + 1) / 2;
  Tensor out(x.channels(), out_len);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t i = 0; i < out_len; ++i) {
      const std::size_t a = 2 * i;
      out(c, i) = a + 1 < x.time() ? 0.5 * (x(c, a) + x(c, a + 1)) : x(c, a);
    }
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.time() < 1) throw ShapeError("global_avg_pool: empty sequence");
  Tensor out(x.channels(), 1);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double s = 0.0;
    for (double v : x.row(c)) s += v;
    out[c] = s / static_cast<double>(x.time());
  }
  return out;
}

Tensor flip(const Tensor& x) {
  Tensor out(x.channels(), x.time());
  const std::size_t t_len = x.time();
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t t = 0; t < t_len; ++t) out(c, t) = x(c, t_len - 1 - t);
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t t_len = parts.front().time();
  std::size_t c_total = 0;
  for (const auto& p : parts) {
    if (p.time() != t_len) throw ShapeError("concat_channels: time mismatch " + parts.front().shape() + " vs " + p.shape());
    c_total += p.channels();
  }
  std::vector<double> data;
  data.reserve(c_total * t_len);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(c_total, t_len, std::move(data));
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.channels()) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + x.shape());
  }
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.time());
  return Tensor(count, x.time(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.time())));
}

Tensor transpose(const Tensor& x) {
  Tensor out(x.time(), x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t t = 0; t < x.time(); ++t) out(t, c) = x(c, t);
  return out;
}

}  // namespace pidnet
