#include "pidnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>
#include <thread>

#include "pidnet/errors.hpp"
#include "pidnet/metrics.hpp"

namespace pidnet {

namespace {

// Stream keys under the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kStepStream = 3;

std::string worst_gradient(const ParamStore& store) {
  std::string name = "(none)";
  double worst = -1.0;
  for (const ParamEntry& e : store.entries()) {
    if (!e.trainable) continue;
    for (double g : e.grad.data()) {
      const double a = std::isfinite(g) ? std::abs(g) : INFINITY;
      if (a > worst) {
        worst = a;
        name = e.name;
      }
    }
  }
  return name + " (max |grad| = " + std::to_string(worst) + ")";
}

bool grads_finite(const ParamStore& store) {
  for (const ParamEntry& e : store.entries()) {
    if (e.trainable && !all_finite(e.grad)) return false;
  }
  return true;
}

}  // namespace

std::size_t worker_threads() {
  if (const char* env = std::getenv("PIDNET_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Trainer::Trainer(const TrainConfig& config, const std::array<std::size_t, 3>& dims)
    : config_(config),
      model_(config.model_config(dims)),
      optimizer_(AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay}) {
  config_.validate();
  RngState init_rng = RngState(config_.seed).derive(kInitStream);
  model_.init(store_, init_rng);
}

double Trainer::train_step(std::span<const ModalityBundle* const> batch, std::span<const double> labels,
                           const RngState& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (batch.size() != labels.size()) throw std::invalid_argument("train_step: one label per sample required");
  ad::Tape tape(true);
  BatchContext ctx;
  ctx.mode = Mode::train;
  ctx.samples.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ctx.samples[i].mode = Mode::train;
    ctx.samples[i].rng = rng.derive(i);
  }
  const std::vector<ad::Var> predictions = model_.forward(tape, store_, batch, ctx);
  std::vector<ad::Var> terms;
  terms.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    terms.push_back(ad::mse(predictions[i], Tensor(1, 1, labels[i])));
  }
  ad::Var loss = ad::scale(ad::sum_all(terms), 1.0 / static_cast<double>(terms.size()));
  const double loss_value = loss.value()[0];

  store_.zero_grads();
  tape.backward(loss);
  tape.accumulate_param_grads(store_);
  if (!std::isfinite(loss_value) || !grads_finite(store_)) {
    const std::string where = worst_gradient(store_);
    store_.zero_grads();
    throw NumericError("non-finite loss " + std::to_string(loss_value) + " at step " +
                       std::to_string(optimizer_.steps() + 1) + "; offending parameter " + where);
  }
  clip_grad_norm(store_, config_.clip_norm);
  optimizer_.step(store_);
  for (auto& [name, value] : ctx.buffer_updates) store_.at(name).value = std::move(value);
  store_.zero_grads();
  return loss_value;
}

std::vector<double> predict_all(const PidnetModel& model, const ParamStore& store,
                                std::span<const io::Sample> samples, std::size_t align_length) {
  std::vector<double> out(samples.size(), 0.0);
  auto work = [&](std::size_t begin, std::size_t end) {
    RngState unused(0);
    for (std::size_t i = begin; i < end; ++i) {
      const ModalityBundle aligned = io::align(samples[i].bundle, align_length, Mode::eval, unused);
      out[i] = model.predict(store, aligned);
    }
  };
  const std::size_t workers = std::min(worker_threads(), samples.size());
  if (workers <= 1) {
    work(0, samples.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (samples.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(samples.size(), begin + chunk);
    if (begin < end) pool.emplace_back(work, begin, end);
  }
  for (auto& t : pool) t.join();
  return out;
}

SplitMetrics evaluate(const PidnetModel& model, const ParamStore& store, std::span<const io::Sample> samples,
                      std::size_t align_length, const io::LabelNorm& norm) {
  SplitMetrics m;
  if (samples.empty()) return m;
  m.predictions = predict_all(model, store, samples, align_length);
  std::vector<double> labels, raw, clamped;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    labels.push_back(samples[i].label);
    raw.push_back(samples[i].raw_score);
    clamped.push_back(std::clamp(m.predictions[i], 0.0, 1.0));
  }
  if (samples.size() >= 2) m.rho = metrics::spearman(m.predictions, labels);
  m.mse = metrics::mse_original(clamped, raw, norm.min, norm.max);
  m.mse_normalized = mse_loss(clamped, labels);
  return m;
}

FitResult fit(Trainer& trainer, std::span<const io::Sample> train, std::span<const io::Sample> val,
              const io::LabelNorm& norm, const EpochCallback& on_epoch) {
  const TrainConfig& cfg = trainer.config();
  FitResult result;
  result.best = trainer.store();
  result.selected_on_train = val.empty();
  if (cfg.max_epochs == 0) return result;
  if (train.empty()) throw std::invalid_argument("fit: empty training set");

  const RngState root(cfg.seed);
  const RngState shuffle_root = root.derive(kShuffleStream);
  const RngState step_root = root.derive(kStepStream);
  const std::span<const io::Sample> selection = val.empty() ? train : val;

  std::vector<std::size_t> order(train.size());
  std::optional<double> best_rho;
  std::size_t since_best = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngState shuffle = shuffle_root.derive(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const RngState step_rng = step_root.derive(step++);
      std::vector<ModalityBundle> aligned;
      std::vector<double> labels;
      aligned.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        RngState crop = step_rng.derive(k - begin).derive(0xC409);
        aligned.push_back(io::align(train[order[k]].bundle, cfg.align_length, Mode::train, crop, cfg.sync_crop));
        labels.push_back(train[order[k]].label);
      }
      std::vector<const ModalityBundle*> batch;
      for (const auto& b : aligned) batch.push_back(&b);
      loss_sum += trainer.train_step(batch, labels, step_rng) * static_cast<double>(end - begin);
    }

    HistoryEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    const SplitMetrics metrics = evaluate(trainer.model(), trainer.store(), selection, cfg.align_length, norm);
    entry.val_rho = metrics.rho;
    entry.val_mse = metrics.mse;
    result.history.push_back(entry);
    if (on_epoch) on_epoch(entry);

    const bool improved = epoch == 1 || (metrics.rho && (!best_rho || *metrics.rho > *best_rho));
    if (improved) {
      if (metrics.rho) best_rho = metrics.rho;
      result.best = trainer.store();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace pidnet
