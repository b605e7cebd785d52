#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "pidnet/group3m.hpp"
#include "support/helpers.hpp"

using namespace pidnet;
using namespace pidnet::group3m;
using pidnet::testing::random_tensor;
using pidnet::testing::tensors_near;

namespace {

Group3MConfig stage_config(std::size_t channels = 8) {
  Group3MConfig c;
  c.block.channels = channels;
  c.block.split_ratio = 0.25;
  c.block.bimamba_depth = 1;
  c.block.wavelet_levels = 1;
  c.block.dropout = 0.1;
  c.mkconv_k = 2;
  c.heads = 2;
  c.stage = 1;
  return c;
}

template <typename Module>
ParamStore make_store(const Module& module, std::uint64_t seed, double jitter = 0.2) {
  ParamStore store;
  RngState rng(seed);
  module.init(store, rng);
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    for (double& v : e.value.data()) v += jitter * rng.normal();
  }
  return store;
}

std::array<Tensor, kModalities> random_modal(std::size_t c, std::size_t t, std::uint64_t seed) {
  return {random_tensor(c, t, seed), random_tensor(c, t, seed + 1), random_tensor(c, t, seed + 2)};
}

StageState constant_state(ad::Tape& tape, const Tensor& fused, const std::array<Tensor, kModalities>& modal) {
  StageState s;
  s.fused = tape.constant(fused);
  for (std::size_t m = 0; m < kModalities; ++m) s.modal[m] = tape.constant(modal[m]);
  return s;
}

}  // namespace

TEST(MKConv, KernelSizes) {
  EXPECT_EQ(MKConv("m", 4, 3).kernel_sizes(), (std::vector<std::size_t>{3, 5, 7}));
  EXPECT_EQ(MKConv("m", 4, 1).kernel_sizes(), (std::vector<std::size_t>{3}));
  EXPECT_THROW(MKConv("m", 4, 0), std::invalid_argument);
}

TEST(MKConv, ZeroParametersGiveGelu) {
  const MKConv mk("m", 4, 3);
  ParamStore store = make_store(mk, 1);
  for (auto& e : store.entries()) e.value.fill(0.0);
  const Tensor x = random_tensor(4, 9, 2);
  EXPECT_EQ(mk.forward(store, x), activation(x, Activation::gelu));
}

TEST(MKConv, DeltaKernelIdentityProjection) {
  const MKConv mk("m", 3, 1);
  ParamStore store = make_store(mk, 1);
  for (auto& e : store.entries()) e.value.fill(0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    store.at(mk.kernel_name(0)).value(c, 1) = 1.0;
    store.at(mk.name("proj.w")).value(c, c) = 1.0;
  }
  const Tensor x = random_tensor(3, 7, 3);
  Tensor doubled = x;
  for (double& v : doubled.data()) v *= 2.0;
  EXPECT_TRUE(tensors_near(mk.forward(store, x), activation(doubled, Activation::gelu), 1e-15));
}

TEST(MKConv, ShapesAndReference) {
  for (std::size_t k = 1; k <= 5; ++k) {
    const MKConv mk("m", 4, k);
    ParamStore store = make_store(mk, k);
    const Tensor x = random_tensor(4, 11, k + 10);
    const Tensor y = mk.forward(store, x);
    ASSERT_EQ(y.channels(), 4u);
    ASSERT_EQ(y.time(), 11u);

    std::vector<Tensor> branches;
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_EQ(store.value(mk.kernel_name(j)).time(), 2 * j + 3);
      branches.push_back(dwconv1d(x, store.value(mk.kernel_name(j))));
    }
    Tensor s = linear(concat_channels(branches), store.value(mk.name("proj.w")), store.value(mk.name("proj.b")));
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += x[i];
    const Tensor hidden =
        activation(linear(s, store.value(mk.name("ffn.w1")), store.value(mk.name("ffn.b1"))), Activation::gelu);
    Tensor out = linear(hidden, store.value(mk.name("ffn.w2")), store.value(mk.name("ffn.b2")));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i];
    EXPECT_TRUE(tensors_near(y, activation(out, Activation::gelu), 1e-12)) << "K=" << k;
  }
}

TEST(MoCAWeights, RowsAreDistributions) {
  RngState rng(5);
  const Tensor q = random_tensor(8, 6, rng);
  const std::array<Tensor, 3> keys = {random_tensor(8, 6, rng), random_tensor(8, 6, rng), random_tensor(8, 6, rng)};
  const auto w = moca_weights(q, keys, 4);
  ASSERT_EQ(w.size(), 6u * 4u * 3u);
  for (std::size_t r = 0; r < w.size(); r += 3) {
    EXPECT_NEAR(w[r] + w[r + 1] + w[r + 2], 1.0, 1e-14);
    for (std::size_t m = 0; m < 3; ++m) EXPECT_GT(w[r + m], 0.0);
  }
}

TEST(MoCAWeights, IdenticalKeysAndZeroQueryAreUniform) {
  const Tensor q = random_tensor(4, 3, 1);
  const Tensor k = random_tensor(4, 3, 2);
  for (double v : moca_weights(q, {k, k, k}, 2)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const std::array<Tensor, 3> keys = {random_tensor(4, 3, 3), random_tensor(4, 3, 4), random_tensor(4, 3, 5)};
  for (double v : moca_weights(Tensor(4, 3, 0.0), keys, 2)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(MoCAWeights, LessSimilarKeysWeighMore) {
  // Single head, d = 2: scores are -q.k / sqrt 2.
  const Tensor q = Tensor::from_rows({{1.0}, {0.0}});
  const std::array<Tensor, 3> keys = {Tensor::from_rows({{2.0}, {0.0}}), Tensor::from_rows({{0.0}, {0.0}}),
                                      Tensor::from_rows({{-1.0}, {0.0}})};
  const auto w = moca_weights(q, keys, 1);
  EXPECT_LT(w[0], w[1]);
  EXPECT_LT(w[1], w[2]);
  const double s = std::sqrt(2.0);
  const double z = std::exp(-2.0 / s) + 1.0 + std::exp(1.0 / s);
  EXPECT_NEAR(w[0], std::exp(-2.0 / s) / z, 1e-15);
  EXPECT_NEAR(w[2], std::exp(1.0 / s) / z, 1e-15);
}

TEST(MoCAWeights, TemporalLocality) {
  const Tensor q = random_tensor(4, 5, 1);
  std::array<Tensor, 3> keys = {random_tensor(4, 5, 2), random_tensor(4, 5, 3), random_tensor(4, 5, 4)};
  const auto base = moca_weights(q, keys, 2);
  keys[1](0, 2) += 3.0;
  const auto changed = moca_weights(q, keys, 2);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 6; ++j) {
      const std::size_t i = t * 6 + j;
      if (t == 2) continue;
      EXPECT_EQ(changed[i], base[i]);
    }
  EXPECT_NE(changed[2 * 6], base[2 * 6]);
}

TEST(MoCAWeights, RejectsBadHeads) {
  const Tensor q(6, 2);
  EXPECT_THROW(moca_weights(q, {q, q, q}, 4), std::invalid_argument);
  EXPECT_THROW(MoCA("m", 6, 4), std::invalid_argument);
}

TEST(MoCA, ForwardMatchesReference) {
  const MoCA moca("m", 8, 2);
  ParamStore store = make_store(moca, 3);
  const Tensor f = random_tensor(8, 5, 4);
  const auto modal = random_modal(8, 5, 5);
  const Tensor y = moca.forward(store, f, modal);

  const Tensor q = linear(f, store.value("m.w_q"));
  std::array<Tensor, 3> k, v;
  for (std::size_t m = 0; m < 3; ++m) {
    k[m] = linear(modal[m], store.value("m.w_k"));
    v[m] = linear(modal[m], store.value("m.w_v"));
  }
  const auto w = moca_weights(q, k, 2);
  Tensor attended(8, 5, 0.0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 8; ++c) {
      const std::size_t h = c / 4;
      for (std::size_t m = 0; m < 3; ++m) attended(c, t) += w[(t * 2 + h) * 3 + m] * v[m](c, t);
    }
  EXPECT_TRUE(tensors_near(y, linear(attended, store.value("m.out.w"), store.value("m.out.b")), 1e-12));
}

TEST(MoCA, AttendGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < 7; ++i) inputs.push_back(random_tensor(4, 3, seed * 10 + i));
    const double err = pidnet::testing::op_grad_error(
        [](ad::Tape&, const std::vector<ad::Var>& v) {
          return moca_attend(v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}, 2);
        },
        inputs, seed);
    EXPECT_LT(err, 1e-6) << "seed " << seed;
  }
}

TEST(Stage, AggregateHasThreeBlocksOfChannels) {
  const Group3MBlock block("s", stage_config());
  ParamStore store = make_store(block, 1);
  ad::Tape tape(false);
  const Tensor f = random_tensor(8, 9, 2);
  const auto modal = random_modal(8, 9, 3);
  ForwardContext ctx;
  std::array<ad::Var, kModalities> enhanced;
  const Tensor z = block.aggregate(tape, store, constant_state(tape, f, modal), ctx, enhanced).value();
  ASSERT_EQ(z.channels(), 24u);
  ASSERT_EQ(z.time(), 9u);

  const Tensor fused_bar = block.mkconv().forward(store, f);
  std::array<Tensor, 3> tilde;
  for (std::size_t m = 0; m < 3; ++m) {
    ForwardContext c;
    tilde[m] = block.modal_block(m).forward(store, modal[m], c);
    EXPECT_TRUE(tensors_near(enhanced[m].value(), tilde[m], 1e-12));
  }
  ForwardContext c;
  const Tensor parts[] = {fused_bar, block.moca().forward(store, fused_bar, tilde),
                          block.fused_block().forward(store, fused_bar, c)};
  EXPECT_TRUE(tensors_near(z, concat_channels(parts), 1e-12));
}

TEST(Stage, EvalForwardMatchesReference) {
  const Group3MBlock block("s", stage_config(16));
  ParamStore store = make_store(block, 4);
  store.at("s.bn.running_mean").value = random_tensor(16, 1, 5, 0.3);
  Tensor var = random_tensor(16, 1, 6, 0.2);
  for (double& v : var.data()) v = 1.0 + std::abs(v);
  store.at("s.bn.running_var").value = var;

  const Tensor f = random_tensor(16, 8, 7);
  const auto modal = random_modal(16, 8, 8);
  ad::Tape tape(false);
  BatchContext batch;
  batch.samples.resize(1);
  std::vector<GateRecord> gates;
  batch.samples[0].gate_sink = &gates;
  const auto out = block.forward(tape, store, {constant_state(tape, f, modal)}, batch);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(batch.buffer_updates.empty());

  ForwardContext ctx;
  std::array<ad::Var, kModalities> enhanced;
  ad::Tape ref_tape(false);
  const Tensor z = block.aggregate(ref_tape, store, constant_state(ref_tape, f, modal), ctx, enhanced).value();
  const Tensor projected = linear(z, store.value("s.proj.w"), store.value("s.proj.b"));
  BatchNormState bn(16);
  bn.running_mean = store.value("s.bn.running_mean");
  bn.running_var = store.value("s.bn.running_var");
  const Tensor normalized =
      batchnorm({projected}, store.value("s.bn.gain"), store.value("s.bn.shift"), bn, Mode::eval)[0];
  const Tensor want = temporal_avg_pool(activation(normalized, Activation::gelu));
  EXPECT_TRUE(tensors_near(out[0].fused.value(), want, 1e-12));
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_TRUE(tensors_near(out[0].modal[m].value(), temporal_avg_pool(enhanced[m].value()), 1e-12));
  }

  ASSERT_EQ(gates.size(), 4u);
  const char* roles[] = {"rgb", "flow", "audio", "fused"};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(gates[i].role, roles[i]);
    EXPECT_EQ(gates[i].stage, 1u);
    EXPECT_EQ(gates[i].sigma.size(), 8u);
  }
}

TEST(Stage, HalvesLength) {
  const Group3MBlock block("s", stage_config());
  ParamStore store = make_store(block, 1);
  for (std::size_t t : {70u, 35u, 18u}) {
    ad::Tape tape(false);
    BatchContext batch;
    batch.samples.resize(1);
    const auto out = block.forward(tape, store, {constant_state(tape, random_tensor(8, t, t), random_modal(8, t, t))},
                                   batch);
    EXPECT_EQ(out[0].fused.time(), (t + 1) / 2);
    for (const auto& m : out[0].modal) {
      EXPECT_EQ(m.channels(), 8u);
      EXPECT_EQ(m.time(), (t + 1) / 2);
    }
  }
}

TEST(Stage, TrainModeBatchStatistics) {
  Group3MConfig cfg = stage_config();
  cfg.block.dropout = 0.0;
  const Group3MBlock block("s", cfg);
  ParamStore store = make_store(block, 2);
  const std::size_t lengths[] = {6, 9};
  ad::Tape tape(false);
  BatchContext batch;
  batch.mode = Mode::train;
  batch.samples.resize(2);
  std::vector<StageState> inputs;
  std::vector<Tensor> projected;
  for (std::size_t i = 0; i < 2; ++i) {
    batch.samples[i].mode = Mode::train;
    const Tensor f = random_tensor(8, lengths[i], 20 + i);
    const auto modal = random_modal(8, lengths[i], 30 + 3 * i);
    inputs.push_back(constant_state(tape, f, modal));
    ad::Tape ref(false);
    ForwardContext ctx;
    ctx.mode = Mode::train;
    std::array<ad::Var, kModalities> enhanced;
    const Tensor z = block.aggregate(ref, store, constant_state(ref, f, modal), ctx, enhanced).value();
    projected.push_back(linear(z, store.value("s.proj.w"), store.value("s.proj.b")));
  }
  const auto out = block.forward(tape, store, inputs, batch);

  BatchNormState bn(8);
  const auto normalized = batchnorm(projected, store.value("s.bn.gain"), store.value("s.bn.shift"), bn, Mode::train);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(
        tensors_near(out[i].fused.value(), temporal_avg_pool(activation(normalized[i], Activation::gelu)), 1e-12));
  }
  ASSERT_EQ(batch.buffer_updates.size(), 2u);
  EXPECT_EQ(batch.buffer_updates[0].first, "s.bn.running_mean");
  EXPECT_TRUE(tensors_near(batch.buffer_updates[0].second, bn.running_mean, 1e-12));
  EXPECT_TRUE(tensors_near(batch.buffer_updates[1].second, bn.running_var, 1e-12));
  // Store is untouched by the forward pass.
  EXPECT_EQ(store.value("s.bn.running_var"), Tensor(8, 1, 1.0));
}

TEST(Stage, RejectsMismatchedInputs) {
  const Group3MBlock block("s", stage_config());
  ParamStore store = make_store(block, 1);
  ad::Tape tape(false);
  BatchContext batch;
  batch.samples.resize(1);
  auto modal = random_modal(8, 6, 1);
  modal[2] = random_tensor(8, 5, 2);
  EXPECT_THROW(block.forward(tape, store, {constant_state(tape, random_tensor(8, 6, 3), modal)}, batch), ShapeError);
  batch.samples.resize(2);
  EXPECT_THROW(block.forward(tape, store, {constant_state(tape, random_tensor(8, 6, 3), random_modal(8, 6, 1))}, batch),
               std::invalid_argument);
}

TEST(StageGradients, EvalMode) {
  const Group3MBlock block("s", stage_config());
  ParamStore store = make_store(block, 9);
  const Tensor f = random_tensor(8, 7, 10);
  const auto modal = random_modal(8, 7, 11);
  const Tensor w = random_tensor(8, 4, 12);
  const Tensor wm = random_tensor(8, 4, 13);
  auto run = [&](ad::Tape& tape, const ParamStore& s) {
    BatchContext batch;
    batch.samples.resize(1);
    const auto out = block.forward(tape, s, {constant_state(tape, f, modal)}, batch);
    ad::Var loss = ad::dot_const(out[0].fused, w);
    for (const auto& m : out[0].modal) loss = ad::add(loss, ad::dot_const(m, wm));
    return loss;
  };
  auto with_grad = [&](ParamStore& s) {
    ad::Tape tape(true);
    ad::Var loss = run(tape, s);
    tape.backward(loss);
    tape.accumulate_param_grads(s);
    return loss.value()[0];
  };
  auto value = [&](const ParamStore& s) {
    ad::Tape tape(false);
    return run(tape, s).value()[0];
  };
  const GradCheckReport report = grad_check(store, with_grad, value);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(StageGradients, TrainModeBatchNormInputs) {
  Group3MConfig cfg = stage_config();
  cfg.block.dropout = 0.0;
  const Group3MBlock block("s", cfg);
  ParamStore store = make_store(block, 14);
  const std::vector<Tensor> inputs = {random_tensor(8, 6, 1), random_tensor(8, 6, 2), random_tensor(8, 6, 3),
                                      random_tensor(8, 6, 4), random_tensor(8, 5, 5), random_tensor(8, 5, 6),
                                      random_tensor(8, 5, 7), random_tensor(8, 5, 8)};
  const double err = pidnet::testing::op_grad_error(
      [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
        BatchContext batch;
        batch.mode = Mode::train;
        batch.samples.resize(2);
        for (auto& s : batch.samples) s.mode = Mode::train;
        const std::vector<StageState> states = {{v[0], {v[1], v[2], v[3]}}, {v[4], {v[5], v[6], v[7]}}};
        const auto out = block.forward(tape, store, states, batch);
        const ad::Var parts[] = {out[0].fused, out[1].fused};
        return ad::concat_time(parts);
      },
      inputs, 15);
  EXPECT_LT(err, 1e-4);
}
