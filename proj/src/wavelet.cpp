#include "pidnet/wavelet.hpp"

#include <cmath>
#include <stdexcept>

namespace pidnet::wavelet {

Basis parse_basis(std::string_view name) {
  if (name == "haar") return Basis::haar;
  if (name == "db2") return Basis::db2;
  throw std::invalid_argument("unknown wavelet basis: " + std::string(name));
}

std::string to_string(Basis basis) { return basis == Basis::haar ? "haar" : "db2"; }

Filters Filters::make(Basis basis) {
  Filters f;
  f.basis = basis;
  if (basis == Basis::haar) {
    f.analysis_low = {M_SQRT1_2, M_SQRT1_2};
  } else {
    const double s3 = std::sqrt(3.0);
    const double norm = 4.0 * M_SQRT2;
    f.analysis_low = {(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm, (1.0 - s3) / norm};
  }
  // Quadrature mirror: high[j] = (-1)^j low[len-1-j].
  const std::size_t len = f.analysis_low.size();
  f.analysis_high.resize(len);
  for (std::size_t j = 0; j < len; ++j) {
    f.analysis_high[j] = (j % 2 == 0 ? 1.0 : -1.0) * f.analysis_low[len - 1 - j];
  }
  f.synthesis_low = f.analysis_low;
  f.synthesis_high = f.analysis_high;
  return f;
}

namespace {

// n even; low/high have n/2 entries.
void analyze(const double* x, std::size_t n, const Filters& f, double* low, double* high) {
  const std::size_t half = n / 2;
  const std::size_t len = f.analysis_low.size();
  for (std::size_t i = 0; i < half; ++i) {
    double l = 0.0, h = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double v = x[(2 * i + j) % n];
      l += f.analysis_low[j] * v;
      h += f.analysis_high[j] * v;
    }
    low[i] = l;
    high[i] = h;
  }
}

// Adjoint of analyze: accumulates into x (length n).
void synthesize(const double* low, const double* high, std::size_t n, const Filters& f, double* x) {
  const std::size_t half = n / 2;
  const std::size_t len = f.synthesis_low.size();
  for (std::size_t i = 0; i < half; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      x[(2 * i + j) % n] += f.synthesis_low[j] * low[i] + f.synthesis_high[j] * high[i];
    }
  }
}

std::size_t padded(std::size_t t) { return t + (t % 2); }

// [low; high] (2C x n/2) from x (C x T), T <= n, zero-extended to even n.
Tensor analyze_stacked(const Tensor& x, const Filters& f, std::size_t n) {
  const std::size_t c_len = x.channels();
  const std::size_t half = n / 2;
  Tensor out(2 * c_len, half);
  std::vector<double> buf(n, 0.0);
  for (std::size_t c = 0; c < c_len; ++c) {
    std::copy(x.row(c).begin(), x.row(c).end(), buf.begin());
    analyze(buf.data(), n, f, out.row(c).data(), out.row(c_len + c).data());
  }
  return out;
}

// x (C x original_length) from [low; high].
Tensor synthesize_stacked(const Tensor& lh, const Filters& f, std::size_t original_length) {
  if (lh.channels() % 2 != 0) throw ShapeError("idwt1: stacked subbands need an even channel count, got " + lh.shape());
  const std::size_t c_len = lh.channels() / 2;
  const std::size_t n = 2 * lh.time();
  if (!(original_length == n || (original_length + 1 == n && original_length > 0))) {
    throw ShapeError("idwt1: original length " + std::to_string(original_length) + " inconsistent with " +
                     std::to_string(lh.time()) + " subband samples");
  }
  Tensor out(c_len, original_length);
  std::vector<double> buf(n);
  for (std::size_t c = 0; c < c_len; ++c) {
    std::fill(buf.begin(), buf.end(), 0.0);
    synthesize(lh.row(c).data(), lh.row(c_len + c).data(), n, f, buf.data());
    std::copy(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(original_length), out.row(c).begin());
  }
  return out;
}

void require_analysable(const Tensor& x) {
  if (x.time() < 2) {
    throw std::invalid_argument("dwt1: need at least 2 time steps, got " + std::to_string(x.time()));
  }
}

}  // namespace

SubbandPair dwt1(const Tensor& x, const Filters& filters) {
  require_analysable(x);
  Tensor lh = analyze_stacked(x, filters, padded(x.time()));
  const std::size_t c_len = x.channels();
  SubbandPair pair;
  pair.low = slice_channels(lh, 0, c_len);
  pair.high = slice_channels(lh, c_len, c_len);
  pair.original_length = x.time();
  return pair;
}

Tensor idwt1(const SubbandPair& pair, const Filters& filters, std::size_t original_length) {
  require_same_shape(pair.low, pair.high, "idwt1");
  const Tensor parts[] = {pair.low, pair.high};
  return synthesize_stacked(concat_channels(parts), filters, original_length);
}

ad::Var dwt1(ad::Var x, const Filters& filters) {
  require_analysable(x.value());
  Tensor out = analyze_stacked(x.value(), filters, padded(x.time()));
  return x.tape()->record(std::move(out), {x}, [x, filters](ad::Tape& tp, std::size_t self) {
    // Adjoint of analysis is synthesis; the gradient of the tail pad is dropped.
    Tensor gx = synthesize_stacked(tp.grad(self), filters, tp.value(x).time());
    Tensor& acc = tp.grad(x);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gx[i];
  });
}

ad::Var idwt1(ad::Var low_high, const Filters& filters, std::size_t original_length) {
  Tensor out = synthesize_stacked(low_high.value(), filters, original_length);
  return low_high.tape()->record(std::move(out), {low_high}, [low_high, filters](ad::Tape& tp, std::size_t self) {
    // Adjoint of synthesis + truncation: zero-extend, then analyze.
    Tensor glh = analyze_stacked(tp.grad(self), filters, 2 * tp.value(low_high).time());
    Tensor& acc = tp.grad(low_high);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += glh[i];
  });
}

SubbandPair subband_enhance(const SubbandPair& pair, const Tensor& kernels, const Tensor& gamma) {
  require_same_shape(pair.low, pair.high, "subband_enhance");
  const std::size_t c_len = pair.low.channels();
  if (kernels.channels() != 2 * c_len || kernels.time() != 3 || gamma.size() != 2 * c_len) {
    throw ShapeError("subband_enhance: kernels " + kernels.shape() + " / gamma " + gamma.shape() +
                     " incompatible with subbands " + pair.low.shape());
  }
  const Tensor parts[] = {pair.low, pair.high};
  Tensor y = dwconv1d(concat_channels(parts), kernels);
  for (std::size_t c = 0; c < y.channels(); ++c)
    for (double& v : y.row(c)) v *= gamma[c];
  SubbandPair out;
  out.low = slice_channels(y, 0, c_len);
  out.high = slice_channels(y, c_len, c_len);
  out.level = pair.level;
  out.original_length = pair.original_length;
  return out;
}

std::size_t min_length(std::size_t levels) {
  if (levels < 1) throw std::invalid_argument("wavelet levels must be >= 1");
  return (std::size_t{1} << (levels - 1)) + 1;
}

WaveletBranch::WaveletBranch(std::string prefix, std::size_t channels, std::size_t levels, Basis basis)
    : prefix_(std::move(prefix)), channels_(channels), levels_(levels), filters_(Filters::make(basis)) {
  if (levels_ < 1) throw std::invalid_argument("wavelet branch needs at least one level");
}

std::string WaveletBranch::kernels_name(std::size_t level) const {
  return prefix_ + ".level" + std::to_string(level) + ".kernels";
}

std::string WaveletBranch::gamma_name(std::size_t level) const {
  return prefix_ + ".level" + std::to_string(level) + ".gamma";
}

void WaveletBranch::init(ParamStore& store) const {
  for (std::size_t q = 1; q <= levels_; ++q) {
    Tensor kernels(2 * channels_, 3, 0.0);
    for (std::size_t c = 0; c < 2 * channels_; ++c) kernels(c, 1) = 1.0;
    store.add(kernels_name(q), std::move(kernels));
    store.add(gamma_name(q), Tensor(2 * channels_, 1, 1.0));
  }
}

ad::Var WaveletBranch::forward(ad::Tape& tape, const ParamStore& store, ad::Var x) const {
  if (x.channels() != channels_) {
    throw ShapeError("wavelet branch expects " + std::to_string(channels_) + " channels, got " + x.value().shape());
  }
  const std::size_t needed = min_length(levels_);
  if (x.time() < needed) {
    throw std::invalid_argument("wavelet branch with " + std::to_string(levels_) + " levels needs T >= " +
                                std::to_string(needed) + ", got T = " + std::to_string(x.time()));
  }
  std::vector<ad::Var> enhanced;
  std::vector<std::size_t> lengths;
  ad::Var level_input = x;
  for (std::size_t q = 1; q <= levels_; ++q) {
    lengths.push_back(level_input.time());
    ad::Var lh = dwt1(level_input, filters_);
    ad::Var conv = ad::dwconv1d(lh, tape.param(store, kernels_name(q)));
    enhanced.push_back(ad::scale_channels(conv, tape.param(store, gamma_name(q))));
    level_input = ad::slice_channels(lh, 0, channels_);
  }
  ad::Var residual;
  for (std::size_t q = levels_; q >= 1; --q) {
    ad::Var lh = enhanced[q - 1];
    if (residual.valid()) {
      ad::Var low = ad::add(ad::slice_channels(lh, 0, channels_), residual);
      const ad::Var parts[] = {low, ad::slice_channels(lh, channels_, channels_)};
      lh = ad::concat_channels(parts);
    }
    residual = idwt1(lh, filters_, lengths[q - 1]);
  }
  return residual;
}

Tensor WaveletBranch::forward(const ParamStore& store, const Tensor& x) const {
  ad::Tape tape(false);
  return forward(tape, store, tape.constant(x)).value();
}

}  // namespace pidnet::wavelet
