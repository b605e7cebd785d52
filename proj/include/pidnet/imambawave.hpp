#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>

#include "pidnet/autodiff.hpp"
#include "pidnet/bimamba.hpp"
#include "pidnet/context.hpp"
#include "pidnet/param_store.hpp"
#include "pidnet/wavelet.hpp"

namespace pidnet::imw {

/// How the two enhancement branches are combined.
enum class FusionStrategy { gated, sum, concat };

/// Structural variants of the block used in ablations.
///  - full:          split, Bi-Mamba and wavelet branches, learned gate
///  - no_split:      every channel goes through the enhancement branch
///  - identity_only: the enhancement branch is removed (block is identity)
///  - split_bimamba: gate forced to 1 (Bi-Mamba only)
///  - split_wavelet: gate forced to 0 (wavelet only)
enum class Ablation { full, no_split, identity_only, split_bimamba, split_wavelet };

FusionStrategy parse_fusion(std::string_view name);
std::string to_string(FusionStrategy f);
Ablation parse_ablation(std::string_view name);
std::string to_string(Ablation a);

/// Channel partition: the first floor(alpha * C) channels form the identity
/// part, the rest the enhancement part.
struct SplitSpec {
  double alpha = 0.25;
  std::size_t channels = 0;
  std::size_t id_channels = 0;
  std::size_t en_channels = 0;

  static SplitSpec make(double alpha, std::size_t channels);
};

std::pair<Tensor, Tensor> split(const Tensor& features, const SplitSpec& spec);

/// Two-layer gate perceptron applied independently at each time step:
/// C_En -> ceil(C_En / 2) (GELU) -> 1 -> sigmoid.
struct GateNetParams {
  Tensor w1, b1, w2, b2;
  static std::size_t hidden_width(std::size_t en_channels) { return (en_channels + 1) / 2; }
  static GateNetParams zeros(std::size_t en_channels);
};

/// Returns sigma as a 1 x T tensor.
Tensor gate(const Tensor& en_features, const GateNetParams& net);
ad::Var gate(ad::Var en_features, ad::Var w1, ad::Var b1, ad::Var w2, ad::Var b2);

/// sigma * Y_M + (1 - sigma) * Y_W, then dropout and per-step layer norm.
Tensor gated_fuse(const Tensor& y_mamba, const Tensor& y_wavelet, const Tensor& sigma, double drop_rate,
                  Mode mode, RngState& rng, const Tensor& ln_gain, const Tensor& ln_shift);

struct BlockConfig {
  std::size_t channels = 32;
  double split_ratio = 0.25;
  std::size_t bimamba_depth = 1;
  std::size_t wavelet_levels = 1;
  wavelet::Basis wavelet_basis = wavelet::Basis::haar;
  FusionStrategy fusion = FusionStrategy::gated;
  double dropout = 0.1;
  Ablation ablation = Ablation::full;
  bool tied_scans = false;
};

/// The iMambaWave block: split, Bi-Mamba and wavelet branches on the
/// enhancement channels, fusion, dropout + layer norm, and concatenation
/// behind the untouched identity channels.
class IMambaWave {
 public:
  IMambaWave() = default;
  IMambaWave(std::string prefix, const BlockConfig& config);

  void init(ParamStore& store, RngState& rng) const;
  /// `role` labels gate records written to ctx.gate_sink.
  ad::Var forward(ad::Tape& tape, const ParamStore& store, ad::Var x, ForwardContext& ctx,
                  std::string_view role = {}) const;
  Tensor forward(const ParamStore& store, const Tensor& x, ForwardContext& ctx) const;

  const SplitSpec& split_spec() const { return split_; }
  bool is_identity() const { return split_.en_channels == 0 || config_.ablation == Ablation::identity_only; }
  const bimamba::BiMambaStack& mamba() const { return mamba_; }
  const wavelet::WaveletBranch& wavelet() const { return wavelet_; }
  std::string name(std::string_view field) const { return prefix_ + "." + std::string(field); }

 private:
  std::string prefix_;
  BlockConfig config_;
  SplitSpec split_;
  bimamba::BiMambaStack mamba_;
  wavelet::WaveletBranch wavelet_;
};

}  // namespace pidnet::imw
