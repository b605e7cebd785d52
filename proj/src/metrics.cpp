#include "pidnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "pidnet/tensor.hpp"

namespace pidnet::metrics {

std::vector<double> ranks(std::span<const double> v) {
  if (v.size() < 2) throw std::invalid_argument("ranks: need at least 2 values");
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    // Positions i..j (0-based) hold equal values; their 1-based mean is (i+j)/2 + 1.
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

namespace {

void check_pair(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("spearman: sequences have different lengths");
  if (p.size() < 2) throw std::invalid_argument("spearman: need at least 2 pairs");
}

}  // namespace

std::optional<double> spearman(std::span<const double> p, std::span<const double> q) {
  check_pair(p, q);
  const auto rp = ranks(p);
  const auto rq = ranks(q);
  const double n = static_cast<double>(rp.size());
  const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / n;
  const double mq = std::accumulate(rq.begin(), rq.end(), 0.0) / n;
  double cov = 0.0, vp = 0.0, vq = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) {
    cov += (rp[i] - mp) * (rq[i] - mq);
    vp += (rp[i] - mp) * (rp[i] - mp);
    vq += (rq[i] - mq) * (rq[i] - mq);
  }
  if (vp == 0.0 || vq == 0.0) return std::nullopt;
  return std::clamp(cov / std::sqrt(vp * vq), -1.0, 1.0);
}

double spearman_shortcut(std::span<const double> p, std::span<const double> q) {
  check_pair(p, q);
  const auto rp = ranks(p);
  const auto rq = ranks(q);
  double d2 = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) d2 += (rp[i] - rq[i]) * (rp[i] - rq[i]);
  const double n = static_cast<double>(rp.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

FisherAverage fisher_z_avg(std::span<const double> rhos) {
  if (rhos.empty()) throw std::invalid_argument("fisher_z_avg: no correlations");
  constexpr double kLimit = 1.0 - 1e-12;
  FisherAverage out;
  double z = 0.0;
  for (double r : rhos) {
    if (std::abs(r) >= kLimit) {
      out.clipped = true;
      r = std::copysign(kLimit, r);
    }
    z += std::atanh(r);
  }
  out.value = std::tanh(z / static_cast<double>(rhos.size()));
  return out;
}

double mse_original(std::span<const double> predicted_normalized, std::span<const double> raw_scores,
                    double score_min, double score_max) {
  if (!(score_max != score_min)) throw std::invalid_argument("mse_original: score max equals min");
  if (predicted_normalized.size() != raw_scores.size()) throw ShapeError("mse_original: length mismatch");
  if (raw_scores.empty()) throw std::invalid_argument("mse_original: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < raw_scores.size(); ++i) {
    const double raw = score_min + predicted_normalized[i] * (score_max - score_min);
    s += (raw - raw_scores[i]) * (raw - raw_scores[i]);
  }
  return s / static_cast<double>(raw_scores.size());
}

void EvalReport::add(const std::string& category, const CategoryResult& result) {
  categories[category] = result;
  if (!result.rho) warnings.push_back("spearman undefined for category '" + category + "' (constant ranks)");
}

std::optional<double> EvalReport::fisher_average() const {
  std::vector<double> rhos;
  for (const auto& [name, r] : categories) {
    if (r.rho) rhos.push_back(*r.rho);
  }
  if (rhos.empty()) return std::nullopt;
  return fisher_z_avg(rhos).value;
}

std::string EvalReport::to_json(const std::vector<std::pair<std::string, std::string>>& config) const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rho = nlohmann::ordered_json::object();
  nlohmann::ordered_json mse = nlohmann::ordered_json::object();
  nlohmann::ordered_json n = nlohmann::ordered_json::object();
  std::vector<double> defined;
  for (const auto& [name, r] : categories) {
    if (r.rho) {
      rho[name] = *r.rho;
      defined.push_back(*r.rho);
    } else {
      rho[name] = "undefined";
    }
    mse[name] = r.mse;
    n[name] = r.n;
  }
  std::vector<std::string> all_warnings = warnings;
  j["rho"] = rho;
  j["mse"] = mse;
  if (defined.empty()) {
    j["fisher_avg"] = "undefined";
  } else {
    const auto avg = fisher_z_avg(defined);
    if (avg.clipped) all_warnings.push_back("fisher_z_avg clipped |rho| = 1 to 1 - 1e-12");
    j["fisher_avg"] = avg.value;
  }
  j["n"] = n;
  j["warnings"] = all_warnings;
  if (!config.empty()) {
    nlohmann::ordered_json echo = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config) echo[k] = v;
    j["config"] = echo;
  }
  return j.dump(2);
}

}  // namespace pidnet::metrics
