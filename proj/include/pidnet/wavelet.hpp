#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pidnet/autodiff.hpp"
#include "pidnet/param_store.hpp"
#include "pidnet/tensor.hpp"

namespace pidnet::wavelet {

enum class Basis { haar, db2 };

Basis parse_basis(std::string_view name);
std::string to_string(Basis basis);

/// Orthonormal analysis/synthesis filters. Analysis pairs with samples
/// (x[2i], x[2i+1], ...) with periodic extension past the end; synthesis is
/// the exact transpose, so g_L/g_H coincide with f_L/f_H applied at the same
/// offsets.
struct Filters {
  Basis basis = Basis::haar;
  std::vector<double> analysis_low;
  std::vector<double> analysis_high;
  std::vector<double> synthesis_low;
  std::vector<double> synthesis_high;

  static Filters make(Basis basis);
};

/// Low/high subbands of one decomposition level.
struct SubbandPair {
  Tensor low;
  Tensor high;
  std::size_t level = 1;
  /// Length of the analysed signal before tail padding.
  std::size_t original_length = 0;
};

/// One analysis step along time. Odd lengths get one zero sample appended.
/// Requires T >= 2.
SubbandPair dwt1(const Tensor& x, const Filters& filters);

/// Inverse of dwt1; `original_length` must be 2n or 2n-1 for n subband samples.
Tensor idwt1(const SubbandPair& pair, const Filters& filters, std::size_t original_length);

/// Differentiable analysis: returns [low; high] stacked on channels (2C x n).
ad::Var dwt1(ad::Var x, const Filters& filters);
/// Differentiable synthesis from a stacked [low; high] tensor.
ad::Var idwt1(ad::Var low_high, const Filters& filters, std::size_t original_length);

/// [L;H] -> depthwise conv (k = 3) -> per-channel scale -> split.
/// `kernels` is 2C x 3 and `gamma` 2C x 1.
SubbandPair subband_enhance(const SubbandPair& pair, const Tensor& kernels, const Tensor& gamma);

/// Shortest input that supports `levels` decompositions with tail padding.
std::size_t min_length(std::size_t levels);

/// The frequency branch: Q-level analysis cascade on the low band, learned
/// subband enhancement per level and bottom-up synthesis in which each level's
/// reconstruction is added to the enhanced low band of the level above.
class WaveletBranch {
 public:
  WaveletBranch() = default;
  WaveletBranch(std::string prefix, std::size_t channels, std::size_t levels, Basis basis);

  /// Delta kernels and unit scales: the branch starts as plain DWT/IDWT.
  void init(ParamStore& store) const;
  ad::Var forward(ad::Tape& tape, const ParamStore& store, ad::Var x) const;
  Tensor forward(const ParamStore& store, const Tensor& x) const;

  std::string kernels_name(std::size_t level) const;
  std::string gamma_name(std::size_t level) const;
  std::size_t levels() const { return levels_; }
  const Filters& filters() const { return filters_; }

 private:
  std::string prefix_;
  std::size_t channels_ = 0;
  std::size_t levels_ = 1;
  Filters filters_;
};

}  // namespace pidnet::wavelet
