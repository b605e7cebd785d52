#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "pidnet/autodiff.hpp"
#include "pidnet/context.hpp"
#include "pidnet/imambawave.hpp"
#include "pidnet/param_store.hpp"

namespace pidnet::group3m {

constexpr std::size_t kModalities = 3;

/// Multi-kernel depthwise temporal convolution with 1x1 fusion, residual and
/// a feed-forward refinement:
///   U = W_1x1 [dw_3(F); dw_5(F); ...; dw_{2K+1}(F)] + b
///   out = gelu(F + U + FFN(F + U)),  FFN = C -> 2C (GELU) -> C
class MKConv {
 public:
  MKConv() = default;
  MKConv(std::string prefix, std::size_t channels, std::size_t kernel_count);

  void init(ParamStore& store, RngState& rng) const;
  ad::Var forward(ad::Tape& tape, const ParamStore& store, ad::Var x) const;
  Tensor forward(const ParamStore& store, const Tensor& x) const;

  /// Sizes {3, 5, ..., 2K+1}.
  std::vector<std::size_t> kernel_sizes() const;
  std::string name(const std::string& field) const { return prefix_ + "." + field; }
  std::string kernel_name(std::size_t j) const { return prefix_ + ".dw" + std::to_string(2 * j + 3); }

 private:
  std::string prefix_;
  std::size_t channels_ = 0;
  std::size_t kernel_count_ = 3;
};

/// Per-time-step attention weights over the three modalities for every head,
/// laid out as weights[(t * heads + h) * 3 + m]. Scores are negated scaled
/// dot products, so less similar keys receive larger weights.
std::vector<double> moca_weights(const Tensor& query, const std::array<Tensor, kModalities>& keys,
                                 std::size_t heads);

/// Attention-weighted sum of the modality values per head and step
/// (before the output projection).
ad::Var moca_attend(ad::Var query, const std::array<ad::Var, kModalities>& keys,
                    const std::array<ad::Var, kModalities>& values, std::size_t heads);
Tensor moca_attend(const Tensor& query, const std::array<Tensor, kModalities>& keys,
                   const std::array<Tensor, kModalities>& values, std::size_t heads);

/// Modal complementary attention with shared per-head projections W_Q, W_K,
/// W_V (C x C, rows grouped by head) and an output projection.
class MoCA {
 public:
  MoCA() = default;
  MoCA(std::string prefix, std::size_t channels, std::size_t heads);

  void init(ParamStore& store, RngState& rng) const;
  ad::Var forward(ad::Tape& tape, const ParamStore& store, ad::Var fused,
                  const std::array<ad::Var, kModalities>& modal) const;
  Tensor forward(const ParamStore& store, const Tensor& fused, const std::array<Tensor, kModalities>& modal) const;

  std::string name(const std::string& field) const { return prefix_ + "." + field; }
  std::size_t heads() const { return heads_; }

 private:
  std::string prefix_;
  std::size_t channels_ = 0;
  std::size_t heads_ = 4;
};

struct Group3MConfig {
  imw::BlockConfig block;
  std::size_t mkconv_k = 3;
  std::size_t heads = 4;
  /// Stage index written into gate records.
  std::size_t stage = 0;
};

/// Features of one sample entering or leaving a stage.
struct StageState {
  ad::Var fused;
  std::array<ad::Var, kModalities> modal;
};

extern const std::array<const char*, kModalities> kModalityNames;

/// One fusion stage:
///   F_bar = MKConv(F_O); F_m~ = IMW_m(F_m); N = MoCA(F_bar, {F_m~})
///   Z = [F_bar; N; IMW_O(F_bar)]  (3C x T)
///   F_O' = pool(gelu(BN(W Z + b))),  F_m' = pool(F_m~)
class Group3MBlock {
 public:
  Group3MBlock() = default;
  Group3MBlock(std::string prefix, const Group3MConfig& config);

  void init(ParamStore& store, RngState& rng) const;

  /// Runs the stage on every sample of the batch. Batch normalization couples
  /// the samples in train mode; its running-statistic updates are appended to
  /// batch.buffer_updates.
  std::vector<StageState> forward(ad::Tape& tape, const ParamStore& store, const std::vector<StageState>& inputs,
                                  BatchContext& batch) const;

  /// Stage output before pooling of the fused feature: Z for one sample.
  /// Exposed for the compositional tests.
  ad::Var aggregate(ad::Tape& tape, const ParamStore& store, const StageState& input, ForwardContext& ctx,
                    std::array<ad::Var, kModalities>& enhanced) const;

  const MKConv& mkconv() const { return mkconv_; }
  const MoCA& moca() const { return moca_; }
  const imw::IMambaWave& fused_block() const { return imw_fused_; }
  const imw::IMambaWave& modal_block(std::size_t m) const { return imw_modal_[m]; }
  std::string name(const std::string& field) const { return prefix_ + "." + field; }

 private:
  std::string prefix_;
  Group3MConfig config_;
  MKConv mkconv_;
  MoCA moca_;
  imw::IMambaWave imw_fused_;
  std::array<imw::IMambaWave, kModalities> imw_modal_;
};

}  // namespace pidnet::group3m
