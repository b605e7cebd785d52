#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pidnet/config.hpp"
#include "pidnet/grad_check.hpp"

namespace pidnet {

/// Module a parameter belongs to: embed, mkconv, moca, bimamba, wavelet,
/// imambawave, group3m or head.
std::string module_of(const std::string& param_name);

/// Module names in reporting order.
const std::vector<std::string>& module_names();

struct ModelGradCheck {
  GradCheckReport report;
  std::vector<std::pair<std::string, double>> per_module;  // in module_names() order, present modules only
  std::size_t parameter_count = 0;
};

/// Full-model gradient check on a fixed 2-sample batch with eval-mode
/// stochastic layers. Parameters start from a seeded random perturbation of
/// the initialization so gates and scans are away from their fixed points.
/// `corrupt`, when non-empty, names a parameter whose analytic gradient is
/// deliberately offset (detection test hook).
ModelGradCheck model_grad_check(const TrainConfig& config, const std::array<std::size_t, 3>& dims,
                                std::uint64_t seed, const std::string& corrupt = {});

}  // namespace pidnet
