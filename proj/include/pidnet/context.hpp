#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pidnet/ops.hpp"
#include "pidnet/rng.hpp"
#include "pidnet/tensor.hpp"

namespace pidnet {

/// Gate values emitted by one iMambaWave block during a forward pass.
struct GateRecord {
  std::size_t stage = 0;
  std::string role;
  std::vector<double> sigma;
};

/// Per-sample forward state: mode, the sample's own dropout stream and an
/// optional gate-trace sink.
struct ForwardContext {
  Mode mode = Mode::eval;
  RngState rng{0};
  std::vector<GateRecord>* gate_sink = nullptr;
  std::size_t stage = 0;
};

/// Batch-level state: per-sample contexts plus running-statistic updates
/// produced in train mode. Updates are applied to the store after the step
/// so that parameters stay read-only during forward/backward.
struct BatchContext {
  Mode mode = Mode::eval;
  std::vector<ForwardContext> samples;
  std::vector<std::pair<std::string, Tensor>> buffer_updates;
};

}  // namespace pidnet
