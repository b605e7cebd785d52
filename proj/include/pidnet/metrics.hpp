#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pidnet::metrics {

/// 1-based ranks; tied values share the mean of the positions they occupy.
std::vector<double> ranks(std::span<const double> v);

/// Pearson correlation of average ranks. Returns std::nullopt ("undefined")
/// when either argument's ranks have zero variance.
std::optional<double> spearman(std::span<const double> p, std::span<const double> q);

/// Classical 1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties.
double spearman_shortcut(std::span<const double> p, std::span<const double> q);

struct FisherAverage {
  double value = 0.0;
  /// True if some |rho| >= 1 was clipped to 1 - 1e-12 before atanh.
  bool clipped = false;
};

/// tanh(mean(atanh(rho_i))).
FisherAverage fisher_z_avg(std::span<const double> rhos);

/// MSE in raw score units after mapping normalized predictions back with
/// min + y * (max - min).
double mse_original(std::span<const double> predicted_normalized, std::span<const double> raw_scores,
                    double score_min, double score_max);

struct CategoryResult {
  std::optional<double> rho;
  double mse = 0.0;
  std::size_t n = 0;
};

/// Per-category correlation and raw-unit MSE plus the Fisher-z average over
/// categories with a defined correlation.
struct EvalReport {
  std::map<std::string, CategoryResult> categories;
  std::vector<std::string> warnings;

  void add(const std::string& category, const CategoryResult& result);
  /// nullopt when no category has a defined correlation.
  std::optional<double> fisher_average() const;
  /// JSON object with keys rho, mse, fisher_avg, n, warnings and, when
  /// given, the echoed configuration under "config". Undefined correlations
  /// are the string "undefined".
  std::string to_json(const std::vector<std::pair<std::string, std::string>>& config = {}) const;
};

}  // namespace pidnet::metrics
