#include "pidnet/group3m.hpp"

#include <cmath>
#include <stdexcept>

namespace pidnet::group3m {

const std::array<const char*, kModalities> kModalityNames = {"rgb", "flow", "audio"};

MKConv::MKConv(std::string prefix, std::size_t channels, std::size_t kernel_count)
    : prefix_(std::move(prefix)), channels_(channels), kernel_count_(kernel_count) {
  if (kernel_count_ < 1) throw std::invalid_argument("MKConv needs K >= 1");
}

std::vector<std::size_t> MKConv::kernel_sizes() const {
  std::vector<std::size_t> sizes;
  for (std::size_t j = 0; j < kernel_count_; ++j) sizes.push_back(2 * j + 3);
  return sizes;
}

void MKConv::init(ParamStore& store, RngState& rng) const {
  const double c = static_cast<double>(channels_);
  for (std::size_t j = 0; j < kernel_count_; ++j) {
    const std::size_t k = 2 * j + 3;
    store.add(kernel_name(j), init_normal(channels_, k, static_cast<double>(k), rng));
  }
  const std::size_t stacked = kernel_count_ * channels_;
  store.add(name("proj.w"), init_normal(channels_, stacked, static_cast<double>(stacked), rng));
  store.add(name("proj.b"), Tensor(channels_, 1, 0.0));
  store.add(name("ffn.w1"), init_normal(2 * channels_, channels_, c, rng));
  store.add(name("ffn.b1"), Tensor(2 * channels_, 1, 0.0));
  store.add(name("ffn.w2"), init_normal(channels_, 2 * channels_, 2.0 * c, rng));
  store.add(name("ffn.b2"), Tensor(channels_, 1, 0.0));
}

ad::Var MKConv::forward(ad::Tape& tape, const ParamStore& store, ad::Var x) const {
  if (x.channels() != channels_) {
    throw ShapeError("MKConv expects " + std::to_string(channels_) + " channels, got " + x.value().shape());
  }
  std::vector<ad::Var> branches;
  for (std::size_t j = 0; j < kernel_count_; ++j) {
    branches.push_back(ad::dwconv1d(x, tape.param(store, kernel_name(j))));
  }
  ad::Var u = ad::linear(ad::concat_channels(branches), tape.param(store, name("proj.w")),
                         tape.param(store, name("proj.b")));
  ad::Var s = ad::add(x, u);
  ad::Var hidden = ad::gelu(ad::linear(s, tape.param(store, name("ffn.w1")), tape.param(store, name("ffn.b1"))));
  ad::Var ffn = ad::linear(hidden, tape.param(store, name("ffn.w2")), tape.param(store, name("ffn.b2")));
  return ad::gelu(ad::add(s, ffn));
}

Tensor MKConv::forward(const ParamStore& store, const Tensor& x) const {
  ad::Tape tape(false);
  return forward(tape, store, tape.constant(x)).value();
}

namespace {

void check_moca_shapes(const Tensor& query, const std::array<const Tensor*, kModalities>& others,
                       std::size_t heads) {
  if (heads == 0 || query.channels() % heads != 0) {
    throw std::invalid_argument("MoCA: heads (" + std::to_string(heads) + ") must divide channels (" +
                                std::to_string(query.channels()) + ")");
  }
  for (const Tensor* t : others) require_same_shape(query, *t, "MoCA");
}

}  // namespace

std::vector<double> moca_weights(const Tensor& query, const std::array<Tensor, kModalities>& keys,
                                 std::size_t heads) {
  check_moca_shapes(query, {&keys[0], &keys[1], &keys[2]}, heads);
  const std::size_t dh = query.channels() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> weights(query.time() * heads * kModalities);
  std::array<double, kModalities> scores{};
  for (std::size_t t = 0; t < query.time(); ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t m = 0; m < kModalities; ++m) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) dot += query(h * dh + d, t) * keys[m](h * dh + d, t);
        scores[m] = -dot * inv_sqrt;
      }
      const auto w = softmax(scores);
      for (std::size_t m = 0; m < kModalities; ++m) weights[(t * heads + h) * kModalities + m] = w[m];
    }
  }
  return weights;
}

ad::Var moca_attend(ad::Var query, const std::array<ad::Var, kModalities>& keys,
                    const std::array<ad::Var, kModalities>& values, std::size_t heads) {
  const Tensor& qv = query.value();
  check_moca_shapes(qv, {&values[0].value(), &values[1].value(), &values[2].value()}, heads);
  const std::array<Tensor, kModalities> key_values = {keys[0].value(), keys[1].value(), keys[2].value()};
  std::vector<double> weights = moca_weights(qv, key_values, heads);
  const std::size_t dh = qv.channels() / heads;
  Tensor out(qv.channels(), qv.time(), 0.0);
  for (std::size_t t = 0; t < qv.time(); ++t)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t m = 0; m < kModalities; ++m) {
        const double w = weights[(t * heads + h) * kModalities + m];
        const Tensor& v = values[m].value();
        for (std::size_t d = 0; d < dh; ++d) out(h * dh + d, t) += w * v(h * dh + d, t);
      }

  const ad::Var inputs[] = {query, keys[0], keys[1], keys[2], values[0], values[1], values[2]};
  return query.tape()->record(
      std::move(out), inputs,
      [query, keys, values, heads, weights = std::move(weights)](ad::Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& qv = tp.value(query);
        const std::size_t dh = qv.channels() / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::array<double, kModalities> gw{}, ge{};
        for (std::size_t t = 0; t < qv.time(); ++t) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* w = &weights[(t * heads + h) * kModalities];
            double mean_gw = 0.0;
            for (std::size_t m = 0; m < kModalities; ++m) {
              const Tensor& v = tp.value(values[m]);
              double s = 0.0;
              for (std::size_t d = 0; d < dh; ++d) s += g(h * dh + d, t) * v(h * dh + d, t);
              gw[m] = s;
              mean_gw += w[m] * s;
            }
            for (std::size_t m = 0; m < kModalities; ++m) ge[m] = w[m] * (gw[m] - mean_gw);
            for (std::size_t m = 0; m < kModalities; ++m) {
              if (tp.requires_grad(values[m])) {
                Tensor& gv = tp.grad(values[m]);
                for (std::size_t d = 0; d < dh; ++d) gv(h * dh + d, t) += w[m] * g(h * dh + d, t);
              }
              const Tensor& kv = tp.value(keys[m]);
              if (tp.requires_grad(query)) {
                Tensor& gq = tp.grad(query);
                for (std::size_t d = 0; d < dh; ++d) gq(h * dh + d, t) -= ge[m] * inv_sqrt * kv(h * dh + d, t);
              }
              if (tp.requires_grad(keys[m])) {
                Tensor& gk = tp.grad(keys[m]);
                for (std::size_t d = 0; d < dh; ++d) gk(h * dh + d, t) -= ge[m] * inv_sqrt * qv(h * dh + d, t);
              }
            }
          }
        }
      });
}

Tensor moca_attend(const Tensor& query, const std::array<Tensor, kModalities>& keys,
                   const std::array<Tensor, kModalities>& values, std::size_t heads) {
  ad::Tape tape(false);
  std::array<ad::Var, kModalities> k, v;
  for (std::size_t m = 0; m < kModalities; ++m) {
    k[m] = tape.constant(keys[m]);
    v[m] = tape.constant(values[m]);
  }
  return moca_attend(tape.constant(query), k, v, heads).value();
}

MoCA::MoCA(std::string prefix, std::size_t channels, std::size_t heads)
    : prefix_(std::move(prefix)), channels_(channels), heads_(heads) {
  if (heads_ == 0 || channels_ % heads_ != 0) {
    throw std::invalid_argument("MoCA: heads (" + std::to_string(heads_) + ") must divide channels (" +
                                std::to_string(channels_) + ")");
  }
}

void MoCA::init(ParamStore& store, RngState& rng) const {
  const double c = static_cast<double>(channels_);
  store.add(name("w_q"), init_normal(channels_, channels_, c, rng));
  store.add(name("w_k"), init_normal(channels_, channels_, c, rng));
  store.add(name("w_v"), init_normal(channels_, channels_, c, rng));
  store.add(name("out.w"), init_normal(channels_, channels_, c, rng));
  store.add(name("out.b"), Tensor(channels_, 1, 0.0));
}

ad::Var MoCA::forward(ad::Tape& tape, const ParamStore& store, ad::Var fused,
                      const std::array<ad::Var, kModalities>& modal) const {
  ad::Var wk = tape.param(store, name("w_k"));
  ad::Var wv = tape.param(store, name("w_v"));
  ad::Var q = ad::linear(fused, tape.param(store, name("w_q")));
  std::array<ad::Var, kModalities> keys, values;
  for (std::size_t m = 0; m < kModalities; ++m) {
    keys[m] = ad::linear(modal[m], wk);
    values[m] = ad::linear(modal[m], wv);
  }
  ad::Var attended = moca_attend(q, keys, values, heads_);
  return ad::linear(attended, tape.param(store, name("out.w")), tape.param(store, name("out.b")));
}

Tensor MoCA::forward(const ParamStore& store, const Tensor& fused, const std::array<Tensor, kModalities>& modal) const {
  ad::Tape tape(false);
  std::array<ad::Var, kModalities> m;
  for (std::size_t i = 0; i < kModalities; ++i) m[i] = tape.constant(modal[i]);
  return forward(tape, store, tape.constant(fused), m).value();
}

Group3MBlock::Group3MBlock(std::string prefix, const Group3MConfig& config)
    : prefix_(std::move(prefix)),
      config_(config),
      mkconv_(prefix_ + ".mkconv", config.block.channels, config.mkconv_k),
      moca_(prefix_ + ".moca", config.block.channels, config.heads),
      imw_fused_(prefix_ + ".imw_fused", config.block) {
  for (std::size_t m = 0; m < kModalities; ++m) {
    imw_modal_[m] = imw::IMambaWave(prefix_ + ".imw_" + kModalityNames[m], config.block);
  }
}

void Group3MBlock::init(ParamStore& store, RngState& rng) const {
  const std::size_t c = config_.block.channels;
  mkconv_.init(store, rng);
  for (const auto& block : imw_modal_) block.init(store, rng);
  moca_.init(store, rng);
  imw_fused_.init(store, rng);
  store.add(name("proj.w"), init_normal(c, 3 * c, 3.0 * static_cast<double>(c), rng));
  store.add(name("proj.b"), Tensor(c, 1, 0.0));
  store.add(name("bn.gain"), Tensor(c, 1, 1.0));
  store.add(name("bn.shift"), Tensor(c, 1, 0.0));
  store.add(name("bn.running_mean"), Tensor(c, 1, 0.0), false);
  store.add(name("bn.running_var"), Tensor(c, 1, 1.0), false);
}

ad::Var Group3MBlock::aggregate(ad::Tape& tape, const ParamStore& store, const StageState& input,
                                ForwardContext& ctx, std::array<ad::Var, kModalities>& enhanced) const {
  const Tensor& fv = input.fused.value();
  for (const auto& m : input.modal) require_same_shape(fv, m.value(), "Group3M inputs");
  ctx.stage = config_.stage;
  ad::Var fused_bar = mkconv_.forward(tape, store, input.fused);
  for (std::size_t m = 0; m < kModalities; ++m) {
    enhanced[m] = imw_modal_[m].forward(tape, store, input.modal[m], ctx, kModalityNames[m]);
  }
  ad::Var attended = moca_.forward(tape, store, fused_bar, enhanced);
  ad::Var fused_imw = imw_fused_.forward(tape, store, fused_bar, ctx, "fused");
  const ad::Var parts[] = {fused_bar, attended, fused_imw};
  return ad::concat_channels(parts);
}

std::vector<StageState> Group3MBlock::forward(ad::Tape& tape, const ParamStore& store,
                                              const std::vector<StageState>& inputs, BatchContext& batch) const {
  if (inputs.size() != batch.samples.size()) {
    throw std::invalid_argument("Group3M: batch context size does not match the batch");
  }
  std::vector<ad::Var> projected;
  std::vector<std::array<ad::Var, kModalities>> enhanced(inputs.size());
  ad::Var w = tape.param(store, name("proj.w"));
  ad::Var b = tape.param(store, name("proj.b"));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ad::Var z = aggregate(tape, store, inputs[i], batch.samples[i], enhanced[i]);
    projected.push_back(ad::linear(z, w, b));
  }

  ad::Var gain = tape.param(store, name("bn.gain"));
  ad::Var shift = tape.param(store, name("bn.shift"));
  std::vector<ad::Var> normalized;
  if (batch.mode == Mode::train) {
    Tensor mean, var;
    ad::Var joint = ad::batchnorm_train(ad::concat_time(projected), gain, shift, mean, var);
    const double n = static_cast<double>(joint.time());
    Tensor running_mean = store.value(name("bn.running_mean"));
    Tensor running_var = store.value(name("bn.running_var"));
    for (std::size_t c = 0; c < mean.size(); ++c) {
      running_mean[c] = (1.0 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mean[c];
      running_var[c] = (1.0 - kBatchNormMomentum) * running_var[c] + kBatchNormMomentum * var[c] * n / (n - 1.0);
    }
    batch.buffer_updates.emplace_back(name("bn.running_mean"), std::move(running_mean));
    batch.buffer_updates.emplace_back(name("bn.running_var"), std::move(running_var));
    std::size_t offset = 0;
    for (const auto& p : projected) {
      normalized.push_back(ad::slice_time(joint, offset, p.time()));
      offset += p.time();
    }
  } else {
    const Tensor& mean = store.value(name("bn.running_mean"));
    const Tensor& var = store.value(name("bn.running_var"));
    for (const auto& p : projected) normalized.push_back(ad::batchnorm_eval(p, gain, shift, mean, var));
  }

  std::vector<StageState> outputs(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    outputs[i].fused = ad::temporal_avg_pool(ad::gelu(normalized[i]));
    for (std::size_t m = 0; m < kModalities; ++m) outputs[i].modal[m] = ad::temporal_avg_pool(enhanced[i][m]);
  }
  return outputs;
}

}  // namespace pidnet::group3m
