#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pidnet/config.hpp"
#include "pidnet/model.hpp"
#include "pidnet/param_store.hpp"

// Checkpoint layout (little-endian):
//
//   "PIDC" | version u32 = 1
//   config text length u32 | config text (key = value lines)
//   dims 3 x u32 | score_min f64 | score_max f64
//   parameter count u32, then per parameter:
//     name length u32 | name | trainable u8 | rank u8 | rank x u32 dims | values f64
namespace pidnet {

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  std::array<std::size_t, 3> dims = {0, 0, 0};
  double score_min = 0.0;
  double score_max = 1.0;
  ParamStore params;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointMismatch on malformed content.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws CheckpointMismatch unless `params` holds exactly the parameters of
/// `model` (same names, order, shapes and trainability).
void verify_params(const PidnetModel& model, const ParamStore& params);

/// Throws CheckpointMismatch if the checkpoint's feature dims differ from `dims`.
void verify_dims(const Checkpoint& ckpt, const std::array<std::size_t, 3>& dims);

}  // namespace pidnet
