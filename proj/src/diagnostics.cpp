#include "pidnet/diagnostics.hpp"

#include <algorithm>
#include <stdexcept>

#include "pidnet/dataset.hpp"
#include "pidnet/model.hpp"

namespace pidnet {

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

const std::vector<std::string>& module_names() {
  static const std::vector<std::string> names = {"embed",   "mkconv",     "moca",    "bimamba",
                                                 "wavelet", "imambawave", "group3m", "head"};
  return names;
}

std::string module_of(const std::string& name) {
  if (starts_with(name, "embed.")) return "embed";
  if (starts_with(name, "head.")) return "head";
  if (name.find(".mkconv.") != std::string::npos) return "mkconv";
  if (name.find(".moca.") != std::string::npos) return "moca";
  if (name.find(".mamba.") != std::string::npos) return "bimamba";
  if (name.find(".wavelet.") != std::string::npos) return "wavelet";
  if (name.find(".imw_") != std::string::npos) return "imambawave";
  if (starts_with(name, "stage")) return "group3m";
  return "other";
}

ModelGradCheck model_grad_check(const TrainConfig& config, const std::array<std::size_t, 3>& dims,
                                std::uint64_t seed, const std::string& corrupt) {
  config.validate();
  const PidnetModel model(config.model_config(dims));
  ParamStore store;
  RngState init_rng = RngState(seed).derive(1);
  model.init(store, init_rng);
  if (!corrupt.empty() && !store.contains(corrupt)) {
    throw std::invalid_argument("unknown parameter to corrupt: " + corrupt);
  }
  RngState perturb = RngState(seed).derive(2);
  for (ParamEntry& e : store.entries()) {
    if (!e.trainable) continue;
    for (double& v : e.value.data()) v += 0.1 * perturb.normal();
  }

  const std::size_t length = config.align_length;
  std::vector<ModalityBundle> inputs;
  const std::vector<double> labels = {0.3, 0.8};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    RngState noise = RngState(seed).derive(10 + i);
    inputs.push_back(io::synth_features(0.2 + 0.5 * static_cast<double>(i), length, dims, noise));
  }
  std::vector<const ModalityBundle*> batch;
  for (const auto& b : inputs) batch.push_back(&b);

  auto loss = [&](ad::Tape& tape, const ParamStore& s) {
    BatchContext ctx;
    ctx.mode = Mode::eval;
    ctx.samples.resize(batch.size());
    const auto predictions = model.forward(tape, s, batch, ctx);
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      terms.push_back(ad::mse(predictions[i], Tensor(1, 1, labels[i])));
    }
    return ad::scale(ad::sum_all(terms), 1.0 / static_cast<double>(terms.size()));
  };
  auto with_grad = [&](ParamStore& s) {
    ad::Tape tape(true);
    ad::Var l = loss(tape, s);
    tape.backward(l);
    tape.accumulate_param_grads(s);
    if (!corrupt.empty()) {
      for (double& g : s.at(corrupt).grad.data()) g += 1e-3 * (1.0 + std::abs(g));
    }
    return l.value()[0];
  };
  auto value_only = [&](const ParamStore& s) {
    ad::Tape tape(false);
    return loss(tape, s).value()[0];
  };

  ModelGradCheck out;
  out.report = grad_check(store, with_grad, value_only);
  out.parameter_count = store.trainable_count();
  for (const std::string& module : module_names()) {
    bool present = false;
    double worst = 0.0;
    for (const auto& e : out.report.per_param) {
      if (module_of(e.name) != module) continue;
      present = true;
      worst = std::max(worst, e.max_rel_error);
    }
    if (present) out.per_module.emplace_back(module, worst);
  }
  return out;
}

}  // namespace pidnet
