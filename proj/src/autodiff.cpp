#include "pidnet/autodiff.hpp"

#include <cmath>

namespace pidnet::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  auto it = params_.find(name);
  if (it != params_.end()) return Var(this, it->second);
  const auto& entry = store.at(name);
  nodes_.push_back(Node{entry.value, {}, grad_enabled_ && entry.trainable, false, {}});
  params_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const auto& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.channels(), n.value.time(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad_or_zero(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.channels(), n.value.time(), 0.0);
}

void Tape::backward(Var root) {
  const Tensor& v = value(root);
  backward(root, Tensor(v.channels(), v.time(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  require_same_shape(value(root), seed, "backward seed");
  if (!nodes_[root.id()].requires_grad) return;
  Tensor& g = grad(root.id());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    if (!n.has_grad) continue;
    auto& entry = store.at(name);
    if (!entry.trainable) continue;
    for (std::size_t i = 0; i < n.grad.size(); ++i) entry.grad[i] += n.grad[i];
  }
}

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void add_scaled_into(Tensor& dst, const Tensor& src, double s) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  add_into(out, b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(a)) add_into(tp.grad(a), g);
    if (tp.requires_grad(b)) add_into(tp.grad(b), g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  add_scaled_into(out, b.value(), -1.0);
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(a)) add_into(tp.grad(a), g);
    if (tp.requires_grad(b)) add_scaled_into(tp.grad(b), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad(a);
      const Tensor& bv = tp.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad(b);
      const Tensor& av = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& tp, std::size_t self) {
    add_scaled_into(tp.grad(a), tp.grad(self), s);
  });
}

Var sum_all(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("sum_all: no inputs");
  Tensor out = parts.front().value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    require_same_shape(out, parts[k].value(), "sum_all");
    add_into(out, parts[k].value());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape()->record(std::move(out), parts, [inputs](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    for (const auto& v : inputs) {
      if (tp.requires_grad(v)) add_into(tp.grad(v), g);
    }
  });
}

Var mul_const(Var a, Tensor mask) {
  require_same_shape(a.value(), mask, "mul_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return a.tape()->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

namespace {

// gx += W^T g ; gW += g x^T
void linear_backward(Tape& tp, std::size_t self, Var x, Var w) {
  const Tensor& g = tp.grad(self);
  const Tensor& xv = tp.value(x);
  const Tensor& wv = tp.value(w);
  const std::size_t c_out = wv.channels(), c_in = wv.time(), t_len = xv.time();
  if (tp.requires_grad(x)) {
    Tensor& gx = tp.grad(x);
    for (std::size_t c = 0; c < c_out; ++c) {
      const double* gr = g.row(c).data();
      for (std::size_t i = 0; i < c_in; ++i) {
        const double wci = wv(c, i);
        double* gxi = gx.row(i).data();
        for (std::size_t t = 0; t < t_len; ++t) gxi[t] += wci * gr[t];
      }
    }
  }
  if (tp.requires_grad(w)) {
    Tensor& gw = tp.grad(w);
    for (std::size_t c = 0; c < c_out; ++c) {
      const double* gr = g.row(c).data();
      for (std::size_t i = 0; i < c_in; ++i) {
        const double* xi = xv.row(i).data();
        double s = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) s += gr[t] * xi[t];
        gw(c, i) += s;
      }
    }
  }
}

}  // namespace

Var linear(Var x, Var weight) {
  Tensor out = pidnet::linear(x.value(), weight.value());
  return x.tape()->record(std::move(out), {x, weight}, [x, weight](Tape& tp, std::size_t self) {
    linear_backward(tp, self, x, weight);
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tensor out = pidnet::linear(x.value(), weight.value(), bias.value());
  return x.tape()->record(std::move(out), {x, weight, bias}, [x, weight, bias](Tape& tp, std::size_t self) {
    linear_backward(tp, self, x, weight);
    if (tp.requires_grad(bias)) {
      const Tensor& g = tp.grad(self);
      Tensor& gb = tp.grad(bias);
      for (std::size_t c = 0; c < g.channels(); ++c)
        for (double v : g.row(c)) gb[c] += v;
    }
  });
}

Var dwconv1d(Var x, Var kernels) {
  Tensor out = pidnet::dwconv1d(x.value(), kernels.value());
  return x.tape()->record(std::move(out), {x, kernels}, [x, kernels](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& kv = tp.value(kernels);
    const std::size_t k = kv.time();
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto t_len = static_cast<std::ptrdiff_t>(xv.time());
    const bool need_x = tp.requires_grad(x), need_k = tp.requires_grad(kernels);
    Tensor* gx = need_x ? &tp.grad(x) : nullptr;
    Tensor* gk = need_k ? &tp.grad(kernels) : nullptr;
    for (std::size_t c = 0; c < xv.channels(); ++c) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(t_len, t_len - off);
        double acc = 0.0;
        for (std::ptrdiff_t t = lo; t < hi; ++t) {
          const auto tu = static_cast<std::size_t>(t);
          const auto su = static_cast<std::size_t>(t + off);
          if (need_k) acc += g(c, tu) * xv(c, su);
          if (need_x) (*gx)(c, su) += kv(c, j) * g(c, tu);
        }
        if (need_k) (*gk)(c, j) += acc;
      }
    }
  });
}

Var activation(Var x, Activation kind) {
  Tensor out = pidnet::activation(x.value(), kind);
  return x.tape()->record(std::move(out), {x}, [x, kind](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& yv = tp.value(self);
    Tensor& gx = tp.grad(x);
    if (kind == Activation::sigmoid) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_derivative(xv[i]);
    }
  });
}

Var layernorm(Var x, Var gain, Var shift, double eps) {
  Tensor out = pidnet::layernorm(x.value(), gain.value(), shift.value(), eps);
  return x.tape()->record(std::move(out), {x, gain, shift}, [x, gain, shift, eps](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& gv = tp.value(gain);
    const std::size_t c_len = xv.channels();
    const double n = static_cast<double>(c_len);
    const bool need_x = tp.requires_grad(x), need_g = tp.requires_grad(gain), need_s = tp.requires_grad(shift);
    std::vector<double> xhat(c_len), gxhat(c_len);
    for (std::size_t t = 0; t < xv.time(); ++t) {
      double mean = 0.0;
      for (std::size_t c = 0; c < c_len; ++c) mean += xv(c, t);
      mean /= n;
      double var = 0.0;
      for (std::size_t c = 0; c < c_len; ++c) var += (xv(c, t) - mean) * (xv(c, t) - mean);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t c = 0; c < c_len; ++c) {
        xhat[c] = (xv(c, t) - mean) * inv;
        gxhat[c] = g(c, t) * gv[c];
        m1 += gxhat[c];
        m2 += gxhat[c] * xhat[c];
      }
      m1 /= n;
      m2 /= n;
      if (need_x) {
        Tensor& gx = tp.grad(x);
        for (std::size_t c = 0; c < c_len; ++c) gx(c, t) += inv * (gxhat[c] - m1 - xhat[c] * m2);
      }
      if (need_g) {
        Tensor& gg = tp.grad(gain);
        for (std::size_t c = 0; c < c_len; ++c) gg[c] += g(c, t) * xhat[c];
      }
      if (need_s) {
        Tensor& gs = tp.grad(shift);
        for (std::size_t c = 0; c < c_len; ++c) gs[c] += g(c, t);
      }
    }
  });
}

namespace {

Tensor normalize_channels(const Tensor& x, const Tensor& gain, const Tensor& shift,
                          const Tensor& mean, const Tensor& var, double eps) {
  Tensor out(x.channels(), x.time());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    for (std::size_t t = 0; t < x.time(); ++t) out(c, t) = gain[c] * (x(c, t) - mean[c]) * inv + shift[c];
  }
  return out;
}

void check_channel_vectors(const Tensor& x, const Tensor& gain, const Tensor& shift, const char* what) {
  if (gain.size() != x.channels() || shift.size() != x.channels()) {
    throw ShapeError(std::string(what) + ": gain " + gain.shape() + " / shift " + shift.shape() +
                     " incompatible with input " + x.shape());
  }
}

}  // namespace

Var batchnorm_train(Var x, Var gain, Var shift, Tensor& batch_mean, Tensor& batch_var, double eps) {
  const Tensor& xv = x.value();
  check_channel_vectors(xv, gain.value(), shift.value(), "batchnorm");
  if (xv.time() < 2) throw std::invalid_argument("batchnorm: train mode needs at least 2 positions per channel");
  const double n = static_cast<double>(xv.time());
  batch_mean = Tensor(xv.channels(), 1);
  batch_var = Tensor(xv.channels(), 1);
  for (std::size_t c = 0; c < xv.channels(); ++c) {
    double s = 0.0;
    for (double v : xv.row(c)) s += v;
    batch_mean[c] = s / n;
    double ss = 0.0;
    for (double v : xv.row(c)) ss += (v - batch_mean[c]) * (v - batch_mean[c]);
    batch_var[c] = ss / n;
  }
  Tensor out = normalize_channels(xv, gain.value(), shift.value(), batch_mean, batch_var, eps);
  return x.tape()->record(
      std::move(out), {x, gain, shift},
      [x, gain, shift, eps, mean = batch_mean, var = batch_var](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        const Tensor& gv = tp.value(gain);
        const std::size_t t_len = xv.time();
        const double n = static_cast<double>(t_len);
        std::vector<double> xhat(t_len), gxhat(t_len);
        for (std::size_t c = 0; c < xv.channels(); ++c) {
          const double inv = 1.0 / std::sqrt(var[c] + eps);
          double m1 = 0.0, m2 = 0.0, sg = 0.0, sgx = 0.0;
          for (std::size_t t = 0; t < t_len; ++t) {
            xhat[t] = (xv(c, t) - mean[c]) * inv;
            gxhat[t] = g(c, t) * gv[c];
            m1 += gxhat[t];
            m2 += gxhat[t] * xhat[t];
            sg += g(c, t);
            sgx += g(c, t) * xhat[t];
          }
          m1 /= n;
          m2 /= n;
          if (tp.requires_grad(x)) {
            Tensor& gx = tp.grad(x);
            for (std::size_t t = 0; t < t_len; ++t) gx(c, t) += inv * (gxhat[t] - m1 - xhat[t] * m2);
          }
          if (tp.requires_grad(gain)) tp.grad(gain)[c] += sgx;
          if (tp.requires_grad(shift)) tp.grad(shift)[c] += sg;
        }
      });
}

Var batchnorm_eval(Var x, Var gain, Var shift, const Tensor& mean, const Tensor& var, double eps) {
  check_channel_vectors(x.value(), gain.value(), shift.value(), "batchnorm");
  Tensor out = normalize_channels(x.value(), gain.value(), shift.value(), mean, var, eps);
  return x.tape()->record(std::move(out), {x, gain, shift}, [x, gain, shift, mean, var, eps](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& gv = tp.value(gain);
    for (std::size_t c = 0; c < xv.channels(); ++c) {
      const double inv = 1.0 / std::sqrt(var[c] + eps);
      double sg = 0.0, sgx = 0.0;
      for (std::size_t t = 0; t < xv.time(); ++t) {
        sg += g(c, t);
        sgx += g(c, t) * (xv(c, t) - mean[c]) * inv;
      }
      if (tp.requires_grad(x)) {
        Tensor& gx = tp.grad(x);
        for (std::size_t t = 0; t < xv.time(); ++t) gx(c, t) += g(c, t) * gv[c] * inv;
      }
      if (tp.requires_grad(gain)) tp.grad(gain)[c] += sgx;
      if (tp.requires_grad(shift)) tp.grad(shift)[c] += sg;
    }
  });
}

Var scale_channels(Var x, Var gamma) {
  const Tensor& xv = x.value();
  if (gamma.value().size() != xv.channels()) {
    throw ShapeError("scale_channels: gamma " + gamma.value().shape() + " incompatible with input " + xv.shape());
  }
  Tensor out = xv;
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (double& v : out.row(c)) v *= gamma.value()[c];
  return x.tape()->record(std::move(out), {x, gamma}, [x, gamma](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& gm = tp.value(gamma);
    for (std::size_t c = 0; c < xv.channels(); ++c) {
      if (tp.requires_grad(x)) {
        Tensor& gx = tp.grad(x);
        for (std::size_t t = 0; t < xv.time(); ++t) gx(c, t) += gm[c] * g(c, t);
      }
      if (tp.requires_grad(gamma)) {
        double s = 0.0;
        for (std::size_t t = 0; t < xv.time(); ++t) s += g(c, t) * xv(c, t);
        tp.grad(gamma)[c] += s;
      }
    }
  });
}

Var blend(Var sigma, Var a, Var b) {
  require_same_shape(a.value(), b.value(), "blend");
  const Tensor& sv = sigma.value();
  if (sv.channels() != 1 || sv.time() != a.time()) {
    throw ShapeError("blend: gate " + sv.shape() + " incompatible with branches " + a.value().shape());
  }
  Tensor out(a.channels(), a.time());
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t t = 0; t < out.time(); ++t)
      out(c, t) = sv[t] * a.value()(c, t) + (1.0 - sv[t]) * b.value()(c, t);
  return a.tape()->record(std::move(out), {sigma, a, b}, [sigma, a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& sv = tp.value(sigma);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    for (std::size_t c = 0; c < g.channels(); ++c) {
      for (std::size_t t = 0; t < g.time(); ++t) {
        if (tp.requires_grad(a)) tp.grad(a)(c, t) += sv[t] * g(c, t);
        if (tp.requires_grad(b)) tp.grad(b)(c, t) += (1.0 - sv[t]) * g(c, t);
        if (tp.requires_grad(sigma)) tp.grad(sigma)[t] += g(c, t) * (av(c, t) - bv(c, t));
      }
    }
  });
}

Var temporal_avg_pool(Var x) {
  Tensor out = pidnet::temporal_avg_pool(x.value());
  return x.tape()->record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    const std::size_t t_len = gx.time();
    for (std::size_t c = 0; c < g.channels(); ++c) {
      for (std::size_t i = 0; i < g.time(); ++i) {
        const std::size_t a = 2 * i;
        if (a + 1 < t_len) {
          gx(c, a) += 0.5 * g(c, i);
          gx(c, a + 1) += 0.5 * g(c, i);
        } else {
          gx(c, a) += g(c, i);
        }
      }
    }
  });
}

Var global_avg_pool(Var x) {
  Tensor out = pidnet::global_avg_pool(x.value());
  return x.tape()->record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    const double inv = 1.0 / static_cast<double>(gx.time());
    for (std::size_t c = 0; c < gx.channels(); ++c)
      for (double& v : gx.row(c)) v += g[c] * inv;
  });
}

Var flip(Var x) {
  Tensor out = pidnet::flip(x.value());
  return x.tape()->record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    const std::size_t t_len = g.time();
    for (std::size_t c = 0; c < g.channels(); ++c)
      for (std::size_t t = 0; t < t_len; ++t) gx(c, t_len - 1 - t) += g(c, t);
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor out = pidnet::concat_channels(values);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape()->record(std::move(out), parts, [inputs](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    std::size_t offset = 0;
    for (const auto& v : inputs) {
      const std::size_t n = tp.value(v).size();
      if (tp.requires_grad(v)) {
        Tensor& gv = tp.grad(v);
        for (std::size_t i = 0; i < n; ++i) gv[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
  Tensor out = pidnet::slice_channels(x.value(), begin, count);
  return x.tape()->record(std::move(out), {x}, [x, begin](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    const std::size_t offset = begin * gx.time();
    for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
  });
}

Var concat_time(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_time: no inputs");
  const std::size_t c_len = parts.front().channels();
  std::size_t t_total = 0;
  for (const auto& p : parts) {
    if (p.channels() != c_len) throw ShapeError("concat_time: channel mismatch " + parts.front().value().shape() + " vs " + p.value().shape());
    t_total += p.time();
  }
  Tensor out(c_len, t_total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t c = 0; c < c_len; ++c)
      for (std::size_t t = 0; t < v.time(); ++t) out(c, offset + t) = v(c, t);
    offset += v.time();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape()->record(std::move(out), parts, [inputs](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    std::size_t offset = 0;
    for (const auto& v : inputs) {
      const std::size_t t_len = tp.value(v).time();
      if (tp.requires_grad(v)) {
        Tensor& gv = tp.grad(v);
        for (std::size_t c = 0; c < g.channels(); ++c)
          for (std::size_t t = 0; t < t_len; ++t) gv(c, t) += g(c, offset + t);
      }
      offset += t_len;
    }
  });
}

Var slice_time(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.time()) {
    throw ShapeError("slice_time: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + xv.shape());
  }
  Tensor out(xv.channels(), count);
  for (std::size_t c = 0; c < xv.channels(); ++c)
    for (std::size_t t = 0; t < count; ++t) out(c, t) = xv(c, begin + t);
  return x.tape()->record(std::move(out), {x}, [x, begin](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    for (std::size_t c = 0; c < g.channels(); ++c)
      for (std::size_t t = 0; t < g.time(); ++t) gx(c, begin + t) += g(c, t);
  });
}

Var mse(Var pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "mse");
  if (target.size() == 0) throw std::invalid_argument("mse: empty batch");
  const double n = static_cast<double>(target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.value()[i] - target[i];
    s += d * d;
  }
  return pred.tape()->record(Tensor(1, 1, s / n), {pred}, [pred, target, n](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    Tensor& gp = tp.grad(pred);
    const Tensor& pv = tp.value(pred);
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * 2.0 * (pv[i] - target[i]) / n;
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record(Tensor(1, 1, s), {x}, [x](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad(x).data()) v += g;
  });
}

Var dot_const(Var x, const Tensor& weights) {
  require_same_shape(x.value(), weights, "dot_const");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x.value()[i] * weights[i];
  return x.tape()->record(Tensor(1, 1, s), {x}, [x, weights](Tape& tp, std::size_t self) {
    add_scaled_into(tp.grad(x), weights, tp.grad(self)[0]);
  });
}

}  // namespace pidnet::ad
