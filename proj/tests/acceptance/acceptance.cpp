#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pidnet/bimamba.hpp"
#include "pidnet/commands.hpp"
#include "pidnet/config.hpp"
#include "pidnet/dataset.hpp"
#include "pidnet/diagnostics.hpp"
#include "pidnet/feature_file.hpp"
#include "pidnet/group3m.hpp"
#include "pidnet/imambawave.hpp"
#include "pidnet/metrics.hpp"
#include "pidnet/train.hpp"
#include "pidnet/wavelet.hpp"

using namespace pidnet;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kReconstructionTol = 1e-10;
constexpr double kReconstructionBudget = 1.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradBudget = 30.0;
constexpr double kInvariantTol = 1e-12;
constexpr double kInvariantBudget = 60.0;
constexpr double kShortcutTol = 1e-12;
constexpr double kOverfitRho = 0.98;
constexpr double kOverfitMse = 0.01;
constexpr double kOverfitBudget = 600.0;
constexpr double kAblationBudget = 3600.0;
constexpr std::size_t kAblationEpochs = 60;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor random_tensor(std::size_t c, std::size_t t, RngState& rng) {
  Tensor x(c, t);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pidnet_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pidnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reconstruction() {
  double worst = 0.0;
  for (auto basis : {wavelet::Basis::haar, wavelet::Basis::db2}) {
    const auto filters = wavelet::Filters::make(basis);
    for (std::size_t t : {2u, 4u, 7u, 70u, 130u}) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RngState rng(seed);
        const Tensor x = random_tensor(4, t, rng);
        worst = std::max(worst, max_abs_diff(wavelet::idwt1(wavelet::dwt1(x, filters), filters, t), x));
      }
    }
  }
  return {worst <= kReconstructionTol, "max error " + fmt("%.3e", worst)};
}

Outcome gradients() {
  const ModelGradCheck check = model_grad_check(TrainConfig::micro(), {6, 6, 4}, 0);
  bool every = true;
  for (const auto& e : check.report.per_param) every = every && e.max_rel_error < kGradTol;
  return {every && check.report.max_rel_error < kGradTol,
          fmt("max relative error %.3e", check.report.max_rel_error) + " over " +
              std::to_string(check.report.per_param.size()) + " parameters"};
}

Outcome invariants() {
  std::size_t checks = 0, failures = 0;
  std::string first;
  auto expect = [&](bool ok, const std::string& what) {
    ++checks;
    if (!ok && failures++ == 0) first = what;
  };

  // Identity-branch exactness.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    imw::BlockConfig cfg;
    cfg.channels = 8;
    const imw::IMambaWave block("b", cfg);
    ParamStore store;
    RngState rng(seed);
    block.init(store, rng);
    for (auto& e : store.entries())
      for (double& v : e.value.data()) v += rng.normal();
    const Tensor x = random_tensor(8, 9, rng);
    ForwardContext ctx;
    ctx.mode = Mode::train;
    ctx.rng = RngState(seed);
    const Tensor y = block.forward(store, x, ctx);
    bool exact = true;
    for (std::size_t c = 0; c < block.split_spec().id_channels; ++c)
      for (std::size_t t = 0; t < 9; ++t) exact = exact && y(c, t) == x(c, t);
    expect(exact, "identity-branch exactness");
  }

  // Gate convex hull.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngState rng(seed);
    const Tensor ym = random_tensor(5, 8, rng), yw = random_tensor(5, 8, rng);
    Tensor sigma(1, 8);
    for (double& v : sigma.data()) v = sigmoid(3.0 * rng.normal());
    ad::Tape tape(false);
    const Tensor mixed = ad::blend(tape.constant(sigma), tape.constant(ym), tape.constant(yw)).value();
    bool inside = true;
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      inside = inside && mixed[i] >= std::min(ym[i], yw[i]) - kInvariantTol &&
               mixed[i] <= std::max(ym[i], yw[i]) + kInvariantTol;
    }
    expect(inside, "gate convex hull");
  }

  // MoCA simplex and anti-similarity monotonicity.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngState rng(seed);
    const Tensor q = random_tensor(8, 6, rng);
    const std::array<Tensor, 3> keys = {random_tensor(8, 6, rng), random_tensor(8, 6, rng), random_tensor(8, 6, rng)};
    const auto w = group3m::moca_weights(q, keys, 2);
    bool simplex = true, monotone = true;
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t h = 0; h < 2; ++h) {
        const double* row = &w[(t * 2 + h) * 3];
        simplex = simplex && std::abs(row[0] + row[1] + row[2] - 1.0) <= kInvariantTol && row[0] > 0 && row[1] > 0 &&
                  row[2] > 0;
        std::array<double, 3> dots{};
        for (std::size_t m = 0; m < 3; ++m)
          for (std::size_t d = 0; d < 4; ++d) dots[m] += q(h * 4 + d, t) * keys[m](h * 4 + d, t);
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            if (dots[a] < dots[b]) monotone = monotone && row[a] >= row[b];
      }
    }
    expect(simplex, "MoCA simplex");
    expect(monotone, "MoCA anti-similarity monotonicity");
  }

  // Bi-Mamba tied flip equivariance and scan causality.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngState rng(seed + 100);
    const bimamba::ScanParams p = bimamba::ScanParams::random(3, rng);
    const Tensor x = random_tensor(3, 11, rng);
    expect(max_abs_diff(bimamba::bimamba_unit(flip(x), p, p), flip(bimamba::bimamba_unit(x, p, p))) <= kInvariantTol,
           "Bi-Mamba flip equivariance");
    const Tensor base = bimamba::ssm_scan(x, p);
    const std::size_t star = 1 + seed % 9;
    Tensor xp = x;
    xp(seed % 3, star) += 1.0;
    const Tensor y = bimamba::ssm_scan(xp, p);
    bool causal = true;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < star; ++t) causal = causal && y(c, t) == base(c, t);
    expect(causal, "ssm_scan causality");
  }

  // Shape contracts over the ablation grids.
  for (double alpha : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    for (std::size_t n = 1; n <= 3; ++n) {
      for (std::size_t q = 1; q <= 3; ++q) {
        imw::BlockConfig cfg;
        cfg.channels = 16;
        cfg.split_ratio = alpha;
        cfg.bimamba_depth = n;
        cfg.wavelet_levels = q;
        const imw::IMambaWave block("b", cfg);
        ParamStore store;
        RngState rng(n * 7 + q);
        block.init(store, rng);
        for (std::size_t t : {wavelet::min_length(q), std::size_t{16}}) {
          ForwardContext ctx;
          const Tensor y = block.forward(store, random_tensor(16, t, rng), ctx);
          expect(y.channels() == 16 && y.time() == t, "iMambaWave shape contract");
        }
      }
    }
  }
  for (std::size_t k = 1; k <= 5; ++k) {
    const group3m::MKConv mk("m", 8, k);
    ParamStore store;
    RngState rng(k);
    mk.init(store, rng);
    const Tensor y = mk.forward(store, random_tensor(8, 13, rng));
    expect(y.channels() == 8 && y.time() == 13, "MKConv shape contract");
  }
  for (std::size_t t : {70u, 35u, 18u}) {
    group3m::Group3MConfig cfg;
    cfg.block.channels = 8;
    cfg.heads = 2;
    const group3m::Group3MBlock stage("s", cfg);
    ParamStore store;
    RngState rng(t);
    stage.init(store, rng);
    ad::Tape tape(false);
    group3m::StageState in;
    in.fused = tape.constant(random_tensor(8, t, rng));
    for (auto& m : in.modal) m = tape.constant(random_tensor(8, t, rng));
    BatchContext batch;
    batch.samples.resize(1);
    const auto out = stage.forward(tape, store, {in}, batch);
    expect(out[0].fused.time() == (t + 1) / 2 && out[0].fused.channels() == 8, "Group3M shape contract");
  }

  std::string detail = std::to_string(checks - failures) + "/" + std::to_string(checks) + " checks";
  if (failures > 0) detail += "; first failure: " + first;
  return {failures == 0, detail};
}

Outcome metric_oracles() {
  RngState rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform_int(0, 48));
    std::vector<double> p(n), q(n);
    for (double& v : p) v = rng.normal();
    for (double& v : q) v = rng.normal();
    worst = std::max(worst, std::abs(*metrics::spearman(p, q) - metrics::spearman_shortcut(p, q)));
  }
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {1, 3, 2, 5, 4};
  const bool exact = metrics::spearman(a, b) == 0.8;

  bool fixed_point = true, between = true;
  for (int trial = 0; trial < 200; ++trial) {
    const double r = 1.98 * rng.uniform() - 0.99;
    const std::vector<double> same(1 + static_cast<std::size_t>(rng.uniform_int(0, 4)), r);
    fixed_point = fixed_point && std::abs(metrics::fisher_z_avg(same).value - r) <= kShortcutTol;
    std::vector<double> mixed(2 + static_cast<std::size_t>(rng.uniform_int(0, 4)));
    for (double& v : mixed) v = 1.98 * rng.uniform() - 0.99;
    const double avg = metrics::fisher_z_avg(mixed).value;
    between = between && avg >= *std::min_element(mixed.begin(), mixed.end()) &&
              avg <= *std::max_element(mixed.begin(), mixed.end());
  }
  const bool pass = worst <= kShortcutTol && exact && fixed_point && between;
  return {pass, fmt("shortcut gap %.3e", worst) + (exact ? ", 0.8 exact" : ", 0.8 NOT exact") +
                    (fixed_point ? ", fixed point ok" : ", fixed point broken") +
                    (between ? ", betweenness ok" : ", betweenness broken")};
}

Outcome overfit() {
  io::SynthOptions o;
  o.n = 32;
  o.seed = 0;
  o.dims = {32, 32, 24};
  o.val_fraction = 0.0;
  o.align_length = 16;
  const fs::path dir = scratch("overfit");
  const io::Manifest m = io::gen_synth(o, dir.string());
  const auto train = io::load_split(m, io::Split::train);
  const io::LabelNorm norm = io::LabelNorm::from_range(m.score_min, m.score_max);
  TrainConfig cfg;
  cfg.channels = 32;
  cfg.align_length = 16;
  cfg.seed = 0;
  Trainer trainer(cfg, m.dims);
  const FitResult r = fit(trainer, train, {}, norm);
  const SplitMetrics s = evaluate(trainer.model(), r.best, train, cfg.align_length, norm);
  const double rho = s.rho.value_or(-1.0);
  fs::remove_all(dir);
  return {rho >= kOverfitRho && s.mse_normalized <= kOverfitMse,
          fmt("train rho %.4f", rho) + fmt(", normalized MSE %.5f", s.mse_normalized) + " after " +
              std::to_string(r.history.size()) + " epochs (best " + std::to_string(r.best_epoch) + ")"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

Outcome ablation_direction() {
  io::SynthOptions o;
  o.n = 256;
  o.seed = 0;
  o.val_fraction = 0.25;
  o.align_length = 16;
  const fs::path dir = scratch("ablation");
  const io::Manifest m = io::gen_synth(o, dir.string());
  const auto train = io::load_split(m, io::Split::train);
  const auto val = io::load_split(m, io::Split::val);
  const io::LabelNorm norm = io::LabelNorm::from_range(m.score_min, m.score_max);
  std::vector<double> full, identity;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (auto ablation : {imw::Ablation::full, imw::Ablation::identity_only}) {
      TrainConfig cfg;
      cfg.channels = 32;
      cfg.align_length = 16;
      cfg.max_epochs = kAblationEpochs;
      cfg.seed = seed;
      cfg.ablation = ablation;
      Trainer trainer(cfg, m.dims);
      const FitResult r = fit(trainer, train, val, norm);
      const double rho = evaluate(trainer.model(), r.best, val, cfg.align_length, norm).rho.value_or(-1.0);
      (ablation == imw::Ablation::full ? full : identity).push_back(rho);
    }
  }
  fs::remove_all(dir);
  const double f = median(full), i = median(identity);
  return {f >= i, std::to_string(train.size()) + "/" + std::to_string(val.size()) + " split; median val rho full " +
                      fmt("%.4f", f) + " vs identity_only " + fmt("%.4f", i)};
}

Outcome determinism() {
  const fs::path root = scratch("determinism");
  if (cli({"gen-synth", "--n", "24", "--seed", "7", "--out", (root / "data").string(), "--dims", "16,16,12",
           "--len-range", "16,20", "--align-length", "16"}) != 0) {
    return {false, "gen-synth failed"};
  }
  const std::string manifest = (root / "data" / "manifest.jsonl").string();
  for (const char* run : {"a", "b"}) {
    if (cli({"train", "--manifest", manifest, "--out", (root / run).string(), "--set", "channels=16", "--set",
             "max_epochs=8", "--set", "batch_size=8"}) != 0) {
      return {false, std::string("train run ") + run + " failed"};
    }
  }
  const bool history = slurp(root / "a" / "history.csv") == slurp(root / "b" / "history.csv");
  const std::string ca = slurp(root / "a" / "checkpoint.pidc"), cb = slurp(root / "b" / "checkpoint.pidc");
  std::size_t differing = ca.size() == cb.size() ? 0 : std::max(ca.size(), cb.size());
  for (std::size_t i = 0; i < std::min(ca.size(), cb.size()); ++i) differing += ca[i] != cb[i];
  fs::remove_all(root);
  return {history && differing == 0 && !ca.empty(),
          std::string(history ? "history identical" : "history differs") + ", checkpoint bytes differing: " +
              std::to_string(differing) + " of " + std::to_string(ca.size())};
}

Outcome format_round_trip() {
  const fs::path dir = scratch("format");
  fs::create_directories(dir);
  RngState rng(99);
  std::size_t equal = 0;
  for (int i = 0; i < 100; ++i) {
    ModalityBundle b;
    for (std::size_t m = 0; m < 3; ++m) {
      b[m] = random_tensor(1 + static_cast<std::size_t>(rng.uniform_int(0, 40)),
                           1 + static_cast<std::size_t>(rng.uniform_int(0, 16)), rng);
    }
    const std::string path = (dir / ("f" + std::to_string(i) + ".pidf")).string();
    io::write_sample(path, b);
    const ModalityBundle back = io::read_sample(path);
    equal += back == b && io::encode_sample(back) == io::read_file_bytes(path);
  }
  ModalityBundle b;
  b[0] = random_tensor(3, 2, rng);
  b[1] = random_tensor(3, 2, rng);
  b[2] = random_tensor(3, 1, rng);
  auto bytes = io::encode_sample(b);
  auto kind_of = [](const std::vector<std::uint8_t>& data) {
    try {
      io::decode_sample(data);
    } catch (const io::FormatError& e) {
      return std::make_pair(static_cast<int>(e.kind()), e.offset());
    }
    return std::make_pair(-1, std::size_t{0});
  };
  auto magic = bytes;
  magic[1] = 'X';
  const auto bad_magic = kind_of(magic);
  const auto truncated = kind_of(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 5));
  const bool magic_ok = bad_magic.first == static_cast<int>(io::FormatError::Kind::bad_magic) && bad_magic.second == 0;
  const bool trunc_ok = truncated.first == static_cast<int>(io::FormatError::Kind::truncated);
  fs::remove_all(dir);
  return {equal == 100 && magic_ok && trunc_ok, std::to_string(equal) + "/100 bitwise round trips" +
                                                    (magic_ok ? ", bad magic detected at offset 0" : ", bad magic MISSED") +
                                                    (trunc_ok ? ", truncation detected" : ", truncation MISSED")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
  double budget_seconds;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"perfect reconstruction", reconstruction, kReconstructionBudget},
      {"gradient fidelity", gradients, kGradBudget},
      {"structural invariants", invariants, kInvariantBudget},
      {"metric oracles", metric_oracles, 0.0},
      {"overfit run", overfit, kOverfitBudget},
      {"ablation direction", ablation_direction, kAblationBudget},
      {"determinism", determinism, 0.0},
      {"format round trip", format_round_trip, 0.0},
  };
  std::size_t passed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].budget_seconds > 0.0 && seconds > criteria[i].budget_seconds) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", criteria[i].budget_seconds);
    }
    passed += o.pass;
    std::printf("criterion %zu %-24s %s  %s (%.2f s)\n", i + 1, criteria[i].name, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", passed, criteria.size());
  return passed == criteria.size() ? 0 : 1;
}
