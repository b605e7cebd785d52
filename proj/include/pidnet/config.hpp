#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pidnet/imambawave.hpp"
#include "pidnet/model.hpp"
#include "pidnet/wavelet.hpp"

namespace pidnet {

/// Every hyperparameter of a run. Loaded from flat `key = value` text with
/// `#` comments; unknown keys are rejected.
struct TrainConfig {
  std::size_t channels = 256;
  double split_ratio = 0.25;
  std::size_t bimamba_depth = 1;
  std::size_t wavelet_levels = 1;
  wavelet::Basis wavelet_basis = wavelet::Basis::haar;
  std::size_t mkconv_k = 3;
  std::size_t heads = 4;
  imw::FusionStrategy fusion_strategy = imw::FusionStrategy::gated;
  double dropout = 0.1;
  double lr = 8e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  double clip_norm = 1.0;
  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
  std::size_t align_length = 70;
  bool sync_crop = false;
  imw::Ablation ablation = imw::Ablation::full;

  /// Throws ConfigError naming the offending key.
  void validate() const;

  /// Ordered (key, value) pairs; parse(to_text()) reproduces the config.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  std::string to_text() const;

  /// Parses `key = value` lines. Throws ConfigError on unknown keys, bad
  /// values, or duplicates; missing keys keep their defaults.
  /// `keys_seen`, when given, receives every key present in the text.
  static TrainConfig parse(std::string_view text, std::set<std::string>* keys_seen = nullptr);
  static TrainConfig load(const std::string& path, std::set<std::string>* keys_seen = nullptr);

  /// Sets one key from its textual value.
  void set(const std::string& key, const std::string& value);

  ModelConfig model_config(const std::array<std::size_t, 3>& dims) const;

  /// Small configuration used by the gradient check: C=8, L=8, N=1, Q=1,
  /// K=2, H=2, no dropout.
  static TrainConfig micro();
};

}  // namespace pidnet
