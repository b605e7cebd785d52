#include <cmath>
#include <cstdlib>

#include <gtest/gtest.h>

#include "pidnet/checkpoint.hpp"
#include "pidnet/errors.hpp"
#include "pidnet/metrics.hpp"
#include "pidnet/train.hpp"
#include "support/helpers.hpp"

using namespace pidnet;

namespace {

constexpr std::array<std::size_t, 3> kDims = {6, 6, 4};

TrainConfig small_config() {
  TrainConfig c = TrainConfig::micro();
  c.batch_size = 4;
  c.max_epochs = 3;
  c.patience = 10;
  c.lr = 3e-3;
  c.dropout = 0.1;
  return c;
}

std::vector<io::Sample> synth_samples(std::size_t n, std::uint64_t seed, const io::LabelNorm& norm) {
  io::SynthOptions opt;
  opt.seed = seed;
  opt.dims = kDims;
  opt.min_length = 8;
  opt.max_length = 11;
  std::vector<io::Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    io::SynthSample s = io::synth_sample(opt, i);
    out.push_back({"s" + std::to_string(i), std::move(s.bundle), s.raw_score, norm.normalize(s.raw_score)});
  }
  return out;
}

bool same_values(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.entries()[i].name != b.entries()[i].name || !(a.entries()[i].value == b.entries()[i].value)) return false;
  return true;
}

ParamStore scalar_store(double theta, double grad) {
  ParamStore s;
  s.add("theta", Tensor(1, 1, theta)).grad = Tensor(1, 1, grad);
  return s;
}

}  // namespace

TEST(AdamW, SingleStepByHand) {
  ParamStore store = scalar_store(2.0, 0.5);
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step(store);
  // Decay first: 2 - 0.1 * 0.01 * 2; bias-corrected moments are g and g^2.
  const double want = (2.0 - 0.1 * 0.01 * 2.0) - 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(store.value("theta")[0], want, 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, QuadraticTrajectoryMatchesReference) {
  const AdamWOptions o{0.05, 0.9, 0.999, 1e-8, 1e-3};
  ParamStore store = scalar_store(3.0, 0.0);
  AdamW opt(o);
  double theta = 3.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    const double g = 2.0 * (theta - 1.0);
    store.at("theta").grad[0] = g;
    opt.step(store);
    theta -= o.lr * o.weight_decay * theta;
    m = o.beta1 * m + (1 - o.beta1) * g;
    v = o.beta2 * v + (1 - o.beta2) * g * g;
    const double mh = m / (1 - std::pow(o.beta1, t)), vh = v / (1 - std::pow(o.beta2, t));
    theta -= o.lr * mh / (std::sqrt(vh) + o.eps);
    ASSERT_NEAR(store.value("theta")[0], theta, 1e-12) << "step " << t;
  }
  EXPECT_LT(std::abs(theta - 1.0), std::abs(3.0 - 1.0));
}

TEST(AdamW, ZeroLearningRateAndBuffers) {
  ParamStore store = scalar_store(2.0, 0.7);
  store.add("buffer", Tensor(1, 1, 5.0), false).grad = Tensor(1, 1, 1.0);
  AdamW opt({0.0, 0.9, 0.999, 1e-8, 0.5});
  opt.step(store);
  EXPECT_EQ(store.value("theta")[0], 2.0);
  AdamW live({0.1, 0.9, 0.999, 1e-8, 0.5});
  live.step(store);
  EXPECT_EQ(store.value("buffer")[0], 5.0);
  EXPECT_NE(store.value("theta")[0], 2.0);
}

TEST(ClipGradNorm, ScalesToMaximum) {
  ParamStore store;
  store.add("a", Tensor(1, 1, 0.0)).grad = Tensor(1, 1, 3.0);
  store.add("b", Tensor(1, 1, 0.0)).grad = Tensor(1, 1, 4.0);
  store.add("buf", Tensor(1, 1, 0.0), false).grad = Tensor(1, 1, 100.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(store.at("a").grad[0], 3.0 / (5.0 + 1e-6), 1e-15);
  EXPECT_NEAR(store.at("b").grad[0], 4.0 / (5.0 + 1e-6), 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 10.0), std::hypot(store.at("a").grad[0], store.at("b").grad[0]));
  EXPECT_NEAR(store.at("a").grad[0], 3.0 / (5.0 + 1e-6), 1e-15);
}

TEST(WorkerThreads, Environment) {
  setenv("PIDNET_THREADS", "3", 1);
  EXPECT_EQ(worker_threads(), 3u);
  setenv("PIDNET_THREADS", "zero", 1);
  EXPECT_GE(worker_threads(), 1u);
  unsetenv("PIDNET_THREADS");
  EXPECT_GE(worker_threads(), 1u);
}

TEST(Trainer, StepChangesParametersAndBuffers) {
  Trainer trainer(small_config(), kDims);
  const ParamStore before = trainer.store();
  const auto samples = synth_samples(4, 1, io::LabelNorm::from_range(0, 10));
  std::vector<const ModalityBundle*> batch;
  std::vector<ModalityBundle> aligned;
  std::vector<double> labels;
  RngState unused(0);
  for (const auto& s : samples) aligned.push_back(io::align(s.bundle, 8, Mode::eval, unused));
  for (const auto& b : aligned) batch.push_back(&b);
  for (const auto& s : samples) labels.push_back(s.label);
  const double loss = trainer.train_step(batch, labels, RngState(5));
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GT(loss, 0.0);
  EXPECT_FALSE(same_values(before, trainer.store()));
  EXPECT_NE(trainer.store().value("stage0.bn.running_mean"), before.value("stage0.bn.running_mean"));
  for (const auto& e : trainer.store().entries()) EXPECT_EQ(e.grad, Tensor(e.value.channels(), e.value.time(), 0.0));
  EXPECT_EQ(trainer.optimizer().steps(), 1u);
  EXPECT_THROW(trainer.train_step(batch, std::span<const double>(labels.data(), 2), RngState(5)),
               std::invalid_argument);
}

TEST(Trainer, NonFiniteLossRaisesNumericError) {
  Trainer trainer(small_config(), kDims);
  trainer.store().at("head.w").value[0] = NAN;
  const ParamStore before = trainer.store();
  const auto samples = synth_samples(2, 1, io::LabelNorm::from_range(0, 10));
  RngState unused(0);
  const ModalityBundle a = io::align(samples[0].bundle, 8, Mode::eval, unused);
  const ModalityBundle* batch[] = {&a};
  const double labels[] = {0.5};
  try {
    trainer.train_step(batch, labels, RngState(1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("offending parameter"), std::string::npos) << e.what();
  }
  EXPECT_EQ(trainer.optimizer().steps(), 0u);
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before.entries()[i].name != "head.w") EXPECT_EQ(trainer.store().entries()[i].value, before.entries()[i].value) << before.entries()[i].name;
}

TEST(Evaluate, MetricsOnConstantPredictions) {
  Trainer trainer(small_config(), kDims);
  for (auto& e : trainer.store().entries())
    if (e.trainable) e.value.fill(0.0);
  trainer.store().at("head.b").value[0] = 1.5;
  const io::LabelNorm norm = io::LabelNorm::from_range(0, 10);
  const auto samples = synth_samples(5, 2, norm);
  const SplitMetrics m = evaluate(trainer.model(), trainer.store(), samples, 8, norm);
  EXPECT_FALSE(m.rho.has_value());
  double raw = 0.0, normalized = 0.0;
  for (const auto& s : samples) {
    raw += (10.0 - s.raw_score) * (10.0 - s.raw_score);
    normalized += (1.0 - s.label) * (1.0 - s.label);
  }
  EXPECT_NEAR(m.mse, raw / 5.0, 1e-12);
  EXPECT_NEAR(m.mse_normalized, normalized / 5.0, 1e-12);
  for (double p : m.predictions) EXPECT_EQ(p, 1.5);
  EXPECT_TRUE(evaluate(trainer.model(), trainer.store(), {}, 8, norm).predictions.empty());
}

TEST(Evaluate, RankOnUnclampedPredictions) {
  Trainer trainer(small_config(), kDims);
  const io::LabelNorm norm = io::LabelNorm::from_range(0, 10);
  const auto samples = synth_samples(6, 3, norm);
  const SplitMetrics m = evaluate(trainer.model(), trainer.store(), samples, 8, norm);
  std::vector<double> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  ASSERT_TRUE(m.rho.has_value());
  EXPECT_EQ(*m.rho, *metrics::spearman(m.predictions, labels));
}

TEST(PredictAll, ThreadCountDoesNotChangeResults) {
  Trainer trainer(small_config(), kDims);
  const auto samples = synth_samples(7, 4, io::LabelNorm::from_range(0, 10));
  setenv("PIDNET_THREADS", "1", 1);
  const auto one = predict_all(trainer.model(), trainer.store(), samples, 8);
  setenv("PIDNET_THREADS", "3", 1);
  const auto three = predict_all(trainer.model(), trainer.store(), samples, 8);
  unsetenv("PIDNET_THREADS");
  EXPECT_EQ(one, three);
  RngState unused(0);
  EXPECT_EQ(one[4], trainer.model().predict(trainer.store(), io::align(samples[4].bundle, 8, Mode::eval, unused)));
}

TEST(Fit, ZeroEpochsReturnsInitialization) {
  TrainConfig cfg = small_config();
  cfg.max_epochs = 0;
  Trainer trainer(cfg, kDims);
  const io::LabelNorm norm = io::LabelNorm::from_range(0, 10);
  const auto train = synth_samples(4, 1, norm);
  const FitResult r = fit(trainer, train, {}, norm);
  EXPECT_TRUE(r.history.empty());
  EXPECT_TRUE(same_values(r.best, trainer.store()));
  EXPECT_TRUE(r.selected_on_train);
}

TEST(Fit, PatienceStopsOnConstantTask) {
  TrainConfig cfg = small_config();
  cfg.patience = 1;
  cfg.max_epochs = 20;
  Trainer trainer(cfg, kDims);
  const io::LabelNorm norm = io::LabelNorm::from_range(0, 10);
  auto train = synth_samples(4, 1, norm);
  for (auto& s : train) s.label = 0.5;
  const FitResult r = fit(trainer, train, train, norm);
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_FALSE(r.history[0].val_rho.has_value());
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_FALSE(r.selected_on_train);
}

TEST(Fit, LossDecreasesAndRunsAreDeterministic) {
  TrainConfig cfg = small_config();
  cfg.max_epochs = 10;
  const io::LabelNorm norm = io::LabelNorm::from_range(0, 10);
  const auto train = synth_samples(8, 5, norm);
  const auto val = synth_samples(4, 6, norm);
  std::vector<std::size_t> seen;
  Trainer a(cfg, kDims), b(cfg, kDims);
  const FitResult ra = fit(a, train, val, norm, [&](const HistoryEntry& e) { seen.push_back(e.epoch); });
  const FitResult rb = fit(b, train, val, norm);
  ASSERT_EQ(ra.history.size(), 10u);
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_LT(ra.history.back().train_loss, ra.history.front().train_loss);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].val_rho, rb.history[i].val_rho);
    EXPECT_EQ(ra.history[i].val_mse, rb.history[i].val_mse);
  }
  EXPECT_TRUE(same_values(ra.best, rb.best));
  EXPECT_TRUE(same_values(a.store(), b.store()));

  // The kept snapshot reproduces its epoch's selection metric.
  const SplitMetrics m = evaluate(a.model(), ra.best, val, cfg.align_length, norm);
  EXPECT_EQ(m.rho, ra.history[ra.best_epoch - 1].val_rho);
  for (const auto& h : ra.history) {
    if (h.val_rho && ra.history[ra.best_epoch - 1].val_rho) EXPECT_LE(*h.val_rho, *ra.history[ra.best_epoch - 1].val_rho);
  }

  cfg.seed = 1;
  Trainer c(cfg, kDims);
  const FitResult rc = fit(c, train, val, norm);
  EXPECT_NE(rc.history.front().train_loss, ra.history.front().train_loss);
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
  TrainConfig cfg = small_config();
  Trainer trainer(cfg, kDims);
  for (auto& e : trainer.store().entries())
    for (double& v : e.value.data()) v += 0.01;
  Checkpoint ck{cfg, kDims, 1.0, 9.0, trainer.store()};
  const auto bytes = encode_checkpoint(ck);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PIDC");
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config.to_text(), cfg.to_text());
  EXPECT_EQ(back.dims, kDims);
  EXPECT_EQ(back.score_min, 1.0);
  EXPECT_EQ(back.score_max, 9.0);
  EXPECT_TRUE(same_values(back.params, trainer.store()));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const PidnetModel model(back.config.model_config(back.dims));
  EXPECT_NO_THROW(verify_params(model, back.params));
  const auto samples = synth_samples(3, 7, io::LabelNorm::from_range(0, 10));
  RngState unused(0);
  for (const auto& s : samples) {
    const ModalityBundle a = io::align(s.bundle, 8, Mode::eval, unused);
    EXPECT_EQ(model.predict(back.params, a), trainer.model().predict(trainer.store(), a));
  }
  for (std::size_t i = 0; i < back.params.size(); ++i)
    EXPECT_EQ(back.params.entries()[i].trainable, trainer.store().entries()[i].trainable);

  const std::string path = ::testing::TempDir() + "/ck.pidc";
  save_checkpoint(path, ck);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
}

TEST(Checkpoint, Mismatches) {
  TrainConfig cfg = small_config();
  Trainer trainer(cfg, kDims);
  Checkpoint ck{cfg, kDims, 0.0, 10.0, trainer.store()};
  auto bytes = encode_checkpoint(ck);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointMismatch);
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3)), CheckpointMismatch);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), CheckpointMismatch);

  TrainConfig other = cfg;
  other.mkconv_k = 3;
  EXPECT_THROW(verify_params(PidnetModel(other.model_config(kDims)), trainer.store()), CheckpointMismatch);
  other = cfg;
  other.ablation = imw::Ablation::identity_only;
  EXPECT_THROW(verify_params(PidnetModel(other.model_config(kDims)), trainer.store()), CheckpointMismatch);
  EXPECT_NO_THROW(verify_dims(ck, kDims));
  EXPECT_THROW(verify_dims(ck, {6, 6, 5}), CheckpointMismatch);
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.pidc"), std::ios_base::failure);
}
