#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pidnet/ops.hpp"
#include "pidnet/param_store.hpp"
#include "pidnet/tensor.hpp"

// Reverse-mode differentiation over whole tensors. Every op computes its
// forward value with the plain kernels in ops.hpp and records a closure that
// pushes the output gradient back to its inputs. Gradients are accumulated in
// reverse recording order, which is a valid topological order.
namespace pidnet::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  std::size_t channels() const { return value().channels(); }
  std::size_t time() const { return value().time(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient (inputs under test).
  Var variable(Tensor value);
  /// Leaf bound to a named parameter; repeated lookups return the same node.
  Var param(const ParamStore& store, const std::string& name);

  /// Records an op output. `backward` runs only if some input requires grad.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id);
  Tensor& grad(Var v) { return grad(v.id()); }
  /// Gradient or an all-zero tensor of the node's shape if none flowed.
  Tensor grad_or_zero(Var v) const;

  /// Seeds d(root)/d(root) with ones and runs every recorded closure backwards.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  /// Adds parameter-leaf gradients into the store's gradient buffers.
  void accumulate_param_grads(ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  bool grad_enabled_ = true;
};

// Elementwise arithmetic (shapes must match).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Sum of many same-shape tensors.
Var sum_all(std::span<const Var> parts);
/// Multiplies by a constant mask (dropout).
Var mul_const(Var a, Tensor mask);

Var linear(Var x, Var weight);
Var linear(Var x, Var weight, Var bias);
Var dwconv1d(Var x, Var kernels);
Var activation(Var x, Activation kind);
inline Var gelu(Var x) { return activation(x, Activation::gelu); }
inline Var sigmoid(Var x) { return activation(x, Activation::sigmoid); }
Var layernorm(Var x, Var gain, Var shift, double eps = kNormEps);

/// Batch norm over the time axis of `x` (callers concatenate the batch on
/// time first). Writes the batch mean and biased variance to the out params.
Var batchnorm_train(Var x, Var gain, Var shift, Tensor& batch_mean, Tensor& batch_var,
                    double eps = kNormEps);
Var batchnorm_eval(Var x, Var gain, Var shift, const Tensor& mean, const Tensor& var,
                   double eps = kNormEps);

/// Per-channel scale by a C x 1 vector.
Var scale_channels(Var x, Var gamma);
/// sigma (1 x T) * a + (1 - sigma) * b, sigma broadcast over channels.
Var blend(Var sigma, Var a, Var b);

Var temporal_avg_pool(Var x);
Var global_avg_pool(Var x);
Var flip(Var x);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(Var x, std::size_t begin, std::size_t count);
Var concat_time(std::span<const Var> parts);
Var slice_time(Var x, std::size_t begin, std::size_t count);

/// Mean over all elements of (pred - target)^2, returned as 1 x 1.
Var mse(Var pred, const Tensor& target);
/// Sum of all elements, 1 x 1.
Var sum(Var x);
/// Sum of elementwise product with a constant tensor, 1 x 1.
Var dot_const(Var x, const Tensor& weights);

}  // namespace pidnet::ad
