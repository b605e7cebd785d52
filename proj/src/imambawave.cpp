#include "pidnet/imambawave.hpp"

#include <cmath>
#include <stdexcept>

namespace pidnet::imw {

FusionStrategy parse_fusion(std::string_view name) {
  if (name == "gated") return FusionStrategy::gated;
  if (name == "sum") return FusionStrategy::sum;
  if (name == "concat") return FusionStrategy::concat;
  throw std::invalid_argument("unknown fusion strategy: " + std::string(name));
}

std::string to_string(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::gated: return "gated";
    case FusionStrategy::sum: return "sum";
    case FusionStrategy::concat: return "concat";
  }
  return "gated";
}

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::full;
  if (name == "no_split") return Ablation::no_split;
  if (name == "identity_only") return Ablation::identity_only;
  if (name == "split_bimamba") return Ablation::split_bimamba;
  if (name == "split_wavelet") return Ablation::split_wavelet;
  throw std::invalid_argument("unknown ablation: " + std::string(name));
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_split: return "no_split";
    case Ablation::identity_only: return "identity_only";
    case Ablation::split_bimamba: return "split_bimamba";
    case Ablation::split_wavelet: return "split_wavelet";
  }
  return "full";
}

SplitSpec SplitSpec::make(double alpha, std::size_t channels) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("split ratio must be in (0, 1], got " + std::to_string(alpha));
  }
  SplitSpec s;
  s.alpha = alpha;
  s.channels = channels;
  s.id_channels = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(channels)));
  s.en_channels = channels - s.id_channels;
  return s;
}

std::pair<Tensor, Tensor> split(const Tensor& features, const SplitSpec& spec) {
  if (features.channels() != spec.channels) {
    throw ShapeError("split: spec has " + std::to_string(spec.channels) + " channels, features are " +
                     features.shape());
  }
  return {slice_channels(features, 0, spec.id_channels),
          slice_channels(features, spec.id_channels, spec.en_channels)};
}

GateNetParams GateNetParams::zeros(std::size_t en_channels) {
  const std::size_t hidden = hidden_width(en_channels);
  return {Tensor(hidden, en_channels), Tensor(hidden, 1), Tensor(1, hidden), Tensor(1, 1)};
}

ad::Var gate(ad::Var en_features, ad::Var w1, ad::Var b1, ad::Var w2, ad::Var b2) {
  if (en_features.channels() == 0) throw std::invalid_argument("gate: undefined for zero enhancement channels");
  ad::Var hidden = ad::gelu(ad::linear(en_features, w1, b1));
  return ad::sigmoid(ad::linear(hidden, w2, b2));
}

Tensor gate(const Tensor& en_features, const GateNetParams& net) {
  ad::Tape tape(false);
  return gate(tape.constant(en_features), tape.constant(net.w1), tape.constant(net.b1), tape.constant(net.w2),
              tape.constant(net.b2))
      .value();
}

Tensor gated_fuse(const Tensor& y_mamba, const Tensor& y_wavelet, const Tensor& sigma, double drop_rate,
                  Mode mode, RngState& rng, const Tensor& ln_gain, const Tensor& ln_shift) {
  require_same_shape(y_mamba, y_wavelet, "gated_fuse");
  if (sigma.size() != y_mamba.time()) {
    throw ShapeError("gated_fuse: gate length " + std::to_string(sigma.size()) + " does not match T = " +
                     std::to_string(y_mamba.time()));
  }
  Tensor mixed(y_mamba.channels(), y_mamba.time());
  for (std::size_t c = 0; c < mixed.channels(); ++c)
    for (std::size_t t = 0; t < mixed.time(); ++t)
      mixed(c, t) = sigma[t] * y_mamba(c, t) + (1.0 - sigma[t]) * y_wavelet(c, t);
  return layernorm(dropout(mixed, drop_rate, mode, rng), ln_gain, ln_shift);
}

IMambaWave::IMambaWave(std::string prefix, const BlockConfig& config)
    : prefix_(std::move(prefix)), config_(config) {
  const double alpha = config.ablation == Ablation::no_split ? 1.0 : config.split_ratio;
  split_ = SplitSpec::make(alpha, config.channels);
  if (config.ablation == Ablation::no_split) {
    // Whole feature is enhanced: no identity channels.
    split_.alpha = 0.0;
    split_.id_channels = 0;
    split_.en_channels = config.channels;
  }
  if (!is_identity()) {
    mamba_ = bimamba::BiMambaStack(name("mamba"), split_.en_channels, config.bimamba_depth, config.tied_scans);
    wavelet_ = wavelet::WaveletBranch(name("wavelet"), split_.en_channels, config.wavelet_levels,
                                      config.wavelet_basis);
  }
}

void IMambaWave::init(ParamStore& store, RngState& rng) const {
  if (is_identity()) return;
  const std::size_t en = split_.en_channels;
  mamba_.init(store, rng);
  wavelet_.init(store);
  if (config_.fusion == FusionStrategy::gated) {
    const std::size_t hidden = GateNetParams::hidden_width(en);
    store.add(name("gate.w1"), init_normal(hidden, en, static_cast<double>(en), rng));
    store.add(name("gate.b1"), Tensor(hidden, 1, 0.0));
    store.add(name("gate.w2"), init_normal(1, hidden, static_cast<double>(hidden), rng));
    store.add(name("gate.b2"), Tensor(1, 1, 0.0));
  } else if (config_.fusion == FusionStrategy::concat) {
    store.add(name("fuse.w"), init_normal(en, 2 * en, static_cast<double>(2 * en), rng));
    store.add(name("fuse.b"), Tensor(en, 1, 0.0));
  }
  store.add(name("norm.gain"), Tensor(en, 1, 1.0));
  store.add(name("norm.shift"), Tensor(en, 1, 0.0));
}

ad::Var IMambaWave::forward(ad::Tape& tape, const ParamStore& store, ad::Var x, ForwardContext& ctx,
                            std::string_view role) const {
  if (x.channels() != config_.channels) {
    throw ShapeError("iMambaWave expects " + std::to_string(config_.channels) + " channels, got " +
                     x.value().shape());
  }
  if (is_identity()) return x;

  const std::size_t id = split_.id_channels;
  const std::size_t en = split_.en_channels;
  ad::Var en_part = id == 0 ? x : ad::slice_channels(x, id, en);

  const bool use_mamba = config_.ablation != Ablation::split_wavelet;
  const bool use_wavelet = config_.ablation != Ablation::split_bimamba;
  ad::Var y_mamba = use_mamba ? mamba_.forward(tape, store, en_part) : ad::Var{};
  ad::Var y_wavelet = use_wavelet ? wavelet_.forward(tape, store, en_part) : ad::Var{};

  ad::Var mixed;
  std::vector<double> sigma_trace;
  if (!use_wavelet) {
    mixed = y_mamba;
    sigma_trace.assign(x.time(), 1.0);
  } else if (!use_mamba) {
    mixed = y_wavelet;
    sigma_trace.assign(x.time(), 0.0);
  } else {
    switch (config_.fusion) {
      case FusionStrategy::gated: {
        ad::Var sigma = gate(en_part, tape.param(store, name("gate.w1")), tape.param(store, name("gate.b1")),
                             tape.param(store, name("gate.w2")), tape.param(store, name("gate.b2")));
        const auto sv = sigma.value().data();
        sigma_trace.assign(sv.begin(), sv.end());
        mixed = ad::blend(sigma, y_mamba, y_wavelet);
        break;
      }
      case FusionStrategy::sum:
        mixed = ad::scale(ad::add(y_mamba, y_wavelet), 0.5);
        break;
      case FusionStrategy::concat: {
        const ad::Var parts[] = {y_mamba, y_wavelet};
        mixed = ad::linear(ad::concat_channels(parts), tape.param(store, name("fuse.w")),
                           tape.param(store, name("fuse.b")));
        break;
      }
    }
  }
  if (ctx.gate_sink != nullptr && !sigma_trace.empty()) {
    ctx.gate_sink->push_back(GateRecord{ctx.stage, std::string(role), std::move(sigma_trace)});
  }

  if (ctx.mode == Mode::train && config_.dropout > 0.0) {
    mixed = ad::mul_const(mixed, dropout_mask(en, x.time(), config_.dropout, ctx.rng));
  }
  ad::Var fused = ad::layernorm(mixed, tape.param(store, name("norm.gain")), tape.param(store, name("norm.shift")));
  if (id == 0) return fused;
  const ad::Var parts[] = {ad::slice_channels(x, 0, id), fused};
  return ad::concat_channels(parts);
}

Tensor IMambaWave::forward(const ParamStore& store, const Tensor& x, ForwardContext& ctx) const {
  ad::Tape tape(false);
  return forward(tape, store, tape.constant(x), ctx).value();
}

}  // namespace pidnet::imw
