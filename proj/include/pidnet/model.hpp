#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "pidnet/autodiff.hpp"
#include "pidnet/bundle.hpp"
#include "pidnet/context.hpp"
#include "pidnet/group3m.hpp"
#include "pidnet/param_store.hpp"

namespace pidnet {

struct ModelConfig {
  imw::BlockConfig block;
  std::size_t mkconv_k = 3;
  std::size_t heads = 4;
  std::array<std::size_t, 3> dims = {1024, 1024, 768};
};

/// Per-modality embedding: linear d_m -> C at every time step followed by
/// layer norm across channels. `x` is T x d_m (time-major); the result is C x T.
Tensor embed(const Tensor& x, const Tensor& weight, const Tensor& bias, const Tensor& gain, const Tensor& shift);

/// (1/n) sum (pred - target)^2. Throws on empty or mismatched input.
double mse_loss(std::span<const double> pred, std::span<const double> target);

/// Temporal length after `stages` stride-2 poolings.
std::size_t pooled_length(std::size_t length, std::size_t stages);

/// Embeddings, a zero fused feature, three Group3M stages, global average
/// pooling and a linear regression head.
class PidnetModel {
 public:
  static constexpr std::size_t kStages = 3;

  explicit PidnetModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const group3m::Group3MBlock& stage(std::size_t l) const { return stages_[l]; }

  /// Throws std::invalid_argument if an aligned length L cannot pass through
  /// every stage (wavelet levels need a minimum length at the last stage).
  void validate_length(std::size_t length) const;

  void init(ParamStore& store, RngState& rng) const;

  ad::Var embed(ad::Tape& tape, const ParamStore& store, const Tensor& x, std::size_t modality) const;

  /// One 1 x 1 prediction per sample. All bundles must be aligned to the same
  /// length and match the configured dims; batch.samples must have one
  /// context per bundle.
  std::vector<ad::Var> forward(ad::Tape& tape, const ParamStore& store,
                               std::span<const ModalityBundle* const> batch, BatchContext& ctx) const;

  /// Eval-mode prediction for one aligned sample.
  double predict(const ParamStore& store, const ModalityBundle& bundle,
                 std::vector<GateRecord>* gates = nullptr) const;

 private:
  ModelConfig config_;
  std::array<group3m::Group3MBlock, kStages> stages_;
};

}  // namespace pidnet
