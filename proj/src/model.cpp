#include "pidnet/model.hpp"

#include <stdexcept>
#include <string>

#include "pidnet/wavelet.hpp"

namespace pidnet {

namespace {

std::string embed_name(std::size_t m, const char* field) {
  return std::string("embed.") + group3m::kModalityNames[m] + "." + field;
}

}  // namespace

Tensor embed(const Tensor& x, const Tensor& weight, const Tensor& bias, const Tensor& gain, const Tensor& shift) {
  return layernorm(linear(transpose(x), weight, bias), gain, shift);
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty batch");
  if (pred.size() != target.size()) throw ShapeError("mse_loss: prediction and label counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

std::size_t pooled_length(std::size_t length, std::size_t stages) {
  for (std::size_t i = 0; i < stages; ++i) length = (length + 1) / 2;
  return length;
}

PidnetModel::PidnetModel(const ModelConfig& config) : config_(config) {
  for (std::size_t l = 0; l < kStages; ++l) {
    group3m::Group3MConfig g{config.block, config.mkconv_k, config.heads, l};
    stages_[l] = group3m::Group3MBlock("stage" + std::to_string(l), g);
  }
}

void PidnetModel::validate_length(std::size_t length) const {
  if (length < 1) throw std::invalid_argument("aligned length must be >= 1");
  if (stages_[0].fused_block().is_identity()) return;
  const std::size_t last = pooled_length(length, kStages - 1);
  const std::size_t needed = wavelet::min_length(config_.block.wavelet_levels);
  if (last < needed) {
    std::size_t legal = needed;
    while (pooled_length(legal, kStages - 1) < needed) ++legal;
    throw std::invalid_argument("aligned length " + std::to_string(length) + " too short for " +
                                std::to_string(config_.block.wavelet_levels) +
                                " wavelet levels at the last stage; minimal legal length is " +
                                std::to_string(legal));
  }
}

void PidnetModel::init(ParamStore& store, RngState& rng) const {
  const std::size_t c = config_.block.channels;
  for (std::size_t m = 0; m < group3m::kModalities; ++m) {
    const double fan_in = static_cast<double>(config_.dims[m]);
    store.add(embed_name(m, "w"), init_normal(c, config_.dims[m], fan_in, rng));
    store.add(embed_name(m, "b"), Tensor(c, 1, 0.0));
    store.add(embed_name(m, "ln_gain"), Tensor(c, 1, 1.0));
    store.add(embed_name(m, "ln_shift"), Tensor(c, 1, 0.0));
  }
  for (const auto& s : stages_) s.init(store, rng);
  store.add("head.w", init_normal(1, c, static_cast<double>(c), rng));
  store.add("head.b", Tensor(1, 1, 0.0));
}

ad::Var PidnetModel::embed(ad::Tape& tape, const ParamStore& store, const Tensor& x, std::size_t modality) const {
  if (x.time() != config_.dims[modality]) {
    throw ShapeError(std::string("embedding for ") + group3m::kModalityNames[modality] + " expects dimension " +
                     std::to_string(config_.dims[modality]) + ", got " + std::to_string(x.time()));
  }
  ad::Var projected = ad::linear(tape.constant(transpose(x)), tape.param(store, embed_name(modality, "w")),
                                 tape.param(store, embed_name(modality, "b")));
  return ad::layernorm(projected, tape.param(store, embed_name(modality, "ln_gain")),
                       tape.param(store, embed_name(modality, "ln_shift")));
}

std::vector<ad::Var> PidnetModel::forward(ad::Tape& tape, const ParamStore& store,
                                          std::span<const ModalityBundle* const> batch, BatchContext& ctx) const {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  if (ctx.samples.size() != batch.size()) throw std::invalid_argument("forward: one context per sample required");
  const std::size_t length = batch.front()->length(0);
  validate_length(length);
  std::vector<group3m::StageState> states(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t m = 0; m < group3m::kModalities; ++m) {
      if ((*batch[i]).length(m) != length) {
        throw ShapeError("forward: modalities must be aligned to a common length");
      }
      states[i].modal[m] = embed(tape, store, (*batch[i])[m], m);
    }
    states[i].fused = tape.constant(Tensor(config_.block.channels, length, 0.0));
  }
  for (const auto& s : states) {
    for (double v : s.fused.value().data()) {
      if (v != 0.0) throw std::logic_error("initial fused feature must be exactly zero");
    }
  }
  for (const auto& stage : stages_) states = stage.forward(tape, store, states, ctx);

  ad::Var head_w = tape.param(store, "head.w");
  ad::Var head_b = tape.param(store, "head.b");
  std::vector<ad::Var> predictions;
  predictions.reserve(states.size());
  for (const auto& s : states) predictions.push_back(ad::linear(ad::global_avg_pool(s.fused), head_w, head_b));
  return predictions;
}

double PidnetModel::predict(const ParamStore& store, const ModalityBundle& bundle,
                            std::vector<GateRecord>* gates) const {
  ad::Tape tape(false);
  BatchContext ctx;
  ctx.mode = Mode::eval;
  ctx.samples.resize(1);
  ctx.samples[0].gate_sink = gates;
  const ModalityBundle* batch[] = {&bundle};
  return forward(tape, store, batch, ctx).front().value()[0];
}

}  // namespace pidnet
