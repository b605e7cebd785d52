#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pidnet/config.hpp"
#include "pidnet/dataset.hpp"
#include "pidnet/model.hpp"
#include "pidnet/optim.hpp"
#include "pidnet/param_store.hpp"

namespace pidnet {

/// Worker count for evaluation: PIDNET_THREADS when set to a positive
/// integer, otherwise the hardware concurrency (at least 1).
std::size_t worker_threads();

/// Model, parameters and optimizer state of one training run.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const std::array<std::size_t, 3>& dims);

  const TrainConfig& config() const { return config_; }
  const PidnetModel& model() const { return model_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const AdamW& optimizer() const { return optimizer_; }

  /// One optimization step on already-aligned bundles with normalized
  /// labels. `rng` seeds the per-sample dropout streams. Returns the batch
  /// loss. Throws NumericError (store unchanged) on a non-finite loss or
  /// gradient, naming the parameter with the largest |grad|.
  double train_step(std::span<const ModalityBundle* const> batch, std::span<const double> labels, const RngState& rng);

 private:
  TrainConfig config_;
  PidnetModel model_;
  ParamStore store_;
  AdamW optimizer_;
};

/// Eval-mode predictions on centered crops, sharded over worker_threads()
/// and gathered in input order.
std::vector<double> predict_all(const PidnetModel& model, const ParamStore& store,
                                std::span<const io::Sample> samples, std::size_t align_length);

struct SplitMetrics {
  std::optional<double> rho;  // Spearman of unclamped predictions vs labels
  double mse = 0.0;           // raw units, predictions clamped to [0, 1]
  double mse_normalized = 0.0;
  std::vector<double> predictions;
};

SplitMetrics evaluate(const PidnetModel& model, const ParamStore& store, std::span<const io::Sample> samples,
                      std::size_t align_length, const io::LabelNorm& norm);

struct HistoryEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_rho;
  double val_mse = 0.0;
};

struct FitResult {
  ParamStore best;
  std::vector<HistoryEntry> history;
  std::size_t best_epoch = 0;
  bool selected_on_train = false;  // no validation samples were given
};

using EpochCallback = std::function<void(const HistoryEntry&)>;

/// Epoch loop with seeded shuffling, per-epoch validation Spearman, best
/// snapshot and patience-based early stopping. With an empty validation set
/// the training split drives selection.
FitResult fit(Trainer& trainer, std::span<const io::Sample> train, std::span<const io::Sample> val,
              const io::LabelNorm& norm, const EpochCallback& on_epoch = {});

}  // namespace pidnet
