#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "pidnet/rng.hpp"
#include "pidnet/tensor.hpp"

namespace pidnet {

/// One named parameter: value plus gradient and the two AdamW moments, all
/// with the value's shape. Buffers (e.g. batch-norm running statistics) are
/// stored alongside but never receive gradients or optimizer updates.
struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor moment1;
  Tensor moment2;
  bool trainable = true;
};

/// Named parameters in insertion order. Insertion order is the canonical
/// order for checkpoints, gradient checks and reductions.
class ParamStore {
 public:
  /// Adds a parameter; throws if the name already exists.
  ParamEntry& add(const std::string& name, Tensor value, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  const Tensor& value(const std::string& name) const { return at(name).value; }

  std::size_t size() const { return entries_.size(); }
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  /// Total number of scalar trainable values.
  std::size_t trainable_count() const;

  void zero_grads();
  double grad_norm() const;

  /// Copies values (not gradients or moments) from another store with the
  /// same names and shapes.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Initialization helpers. Weights follow Normal(0, 1/fan_in).
Tensor init_normal(std::size_t rows, std::size_t cols, double fan_in, RngState& rng);

}  // namespace pidnet
