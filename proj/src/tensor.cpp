#include <cmath>

#include "pidnet/param_store.hpp"
#include "pidnet/rng.hpp"
#include "pidnet/tensor.hpp"

namespace pidnet {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::int64_t RngState::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return lo + static_cast<std::int64_t>(r % span);
}

double RngState::normal() {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  // 1 - u lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

ParamEntry& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter: " + name);
  ParamEntry e;
  e.name = name;
  e.grad = Tensor(value.channels(), value.time(), 0.0);
  e.moment1 = Tensor(value.channels(), value.time(), 0.0);
  e.moment2 = Tensor(value.channels(), value.time(), 0.0);
  e.value = std::move(value);
  e.trainable = trainable;
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(e));
  return entries_.back();
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    if (!e.trainable) continue;
    for (double g : e.grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& e : entries_) {
    const auto& src = other.at(e.name);
    require_same_shape(e.value, src.value, e.name.c_str());
    e.value = src.value;
  }
}

Tensor init_normal(std::size_t rows, std::size_t cols, double fan_in, RngState& rng) {
  Tensor w(rows, cols);
  const double std = 1.0 / std::sqrt(fan_in);
  for (double& v : w.data()) v = rng.normal(0.0, std);
  return w;
}

}  // namespace pidnet
