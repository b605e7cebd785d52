#include "pidnet/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ios>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pidnet/checkpoint.hpp"
#include "pidnet/config.hpp"
#include "pidnet/dataset.hpp"
#include "pidnet/diagnostics.hpp"
#include "pidnet/errors.hpp"
#include "pidnet/feature_file.hpp"
#include "pidnet/metrics.hpp"
#include "pidnet/train.hpp"

namespace pidnet {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;

/// Unreadable or inconsistent dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string rho_text(const std::optional<double>& rho) { return rho ? num(*rho) : "undefined"; }

std::string config_comments(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_pairs()) out += "# " + k + " = " + v + "\n";
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot create " + path.string());
  out << text;
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::ios_base::failure("cannot create directory " + dir + ": " + ec.message());
}

io::Manifest load_manifest(const std::string& path) {
  try {
    return io::Manifest::load(path);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

std::vector<io::Sample> load_samples(const io::Manifest& manifest, io::Split split) {
  try {
    return io::load_split(manifest, split);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

/// Config from an optional file plus `key=value` overrides. The manifest's
/// alignment length applies unless set explicitly.
TrainConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                           const io::Manifest* manifest) {
  std::set<std::string> keys;
  TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::load(path, &keys);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    const std::string key = kv.substr(0, eq);
    cfg.set(key, kv.substr(eq + 1));
    keys.insert(key);
  }
  if (manifest != nullptr && keys.count("align_length") == 0) cfg.align_length = manifest->align_length;
  cfg.validate();
  return cfg;
}

std::string history_csv(const TrainConfig& cfg, const std::vector<HistoryEntry>& history) {
  std::string out = config_comments(cfg);
  out += "epoch,train_loss,val_rho,val_mse\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + "," + num(h.train_loss) + "," + rho_text(h.val_rho) + "," + num(h.val_mse) + "\n";
  }
  return out;
}

std::string report_json(const TrainConfig& cfg, const std::string& category, const SplitMetrics& m, std::size_t n,
                         const std::vector<std::string>& warnings) {
  metrics::EvalReport report;
  report.add(category, metrics::CategoryResult{m.rho, m.mse, n});
  report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
  return report.to_json(cfg.to_pairs()) + "\n";
}

struct LoadedModel {
  Checkpoint ckpt;
  PidnetModel model;
};

LoadedModel load_model(const std::string& checkpoint_path, const io::Manifest& manifest) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  verify_dims(ckpt, manifest.dims);
  PidnetModel model(ckpt.config.model_config(ckpt.dims));
  verify_params(model, ckpt.params);
  return LoadedModel{std::move(ckpt), std::move(model)};
}

std::vector<std::string> expand_values(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const std::string& v : raw) {
    const auto dots = v.find("..");
    if (dots == std::string::npos) {
      out.push_back(v);
      continue;
    }
    std::size_t lo = 0, hi = 0;
    try {
      lo = std::stoul(v.substr(0, dots));
      hi = std::stoul(v.substr(dots + 2));
    } catch (const std::exception&) {
      throw ConfigError("bad value range '" + v + "'");
    }
    if (lo > hi) throw ConfigError("bad value range '" + v + "'");
    for (std::size_t x = lo; x <= hi; ++x) out.push_back(std::to_string(x));
  }
  return out;
}

std::string axis_key(const std::string& axis) {
  if (axis == "alpha") return "split_ratio";
  if (axis == "k") return "mkconv_k";
  if (axis == "n") return "bimamba_depth";
  if (axis == "fusion") return "fusion_strategy";
  if (axis == "ablation") return "ablation";
  throw ConfigError("unknown sweep axis '" + axis + "' (expected alpha, k, n, fusion or ablation)");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- commands -------------------------------------------------------------

struct GenSynthArgs {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::size_t> dims = {32, 32, 24};
  std::vector<std::size_t> len_range = {16, 24};
  double val_frac = 0.25;
  std::size_t align_length = 16;
};

int cmd_gen_synth(const GenSynthArgs& a, std::ostream& out) {
  if (a.dims.size() != 3) throw ConfigError("--dims needs three values");
  if (a.len_range.size() != 2) throw ConfigError("--len-range needs two values");
  if (a.n < 4) throw ConfigError("n must be ≥ 4, got " + std::to_string(a.n));
  io::SynthOptions o;
  o.n = a.n;
  o.seed = a.seed;
  o.dims = {a.dims[0], a.dims[1], a.dims[2]};
  o.min_length = a.len_range[0];
  o.max_length = a.len_range[1];
  o.val_fraction = a.val_frac;
  o.align_length = a.align_length;
  io::Manifest m;
  try {
    m = io::gen_synth(o, a.out);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  out << "wrote " << m.entries.size() << " samples (" << m.select(io::Split::train).size() << " train, "
      << m.select(io::Split::val).size() << " val) to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string manifest;
  std::string out;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const io::Manifest manifest = load_manifest(a.manifest);
  const TrainConfig cfg = resolve_config(a.config, a.overrides, &manifest);
  const auto train = load_samples(manifest, io::Split::train);
  const auto val = load_samples(manifest, io::Split::val);
  if (train.empty()) throw DataError("manifest has no training samples");
  const io::LabelNorm norm = io::LabelNorm::from_range(manifest.score_min, manifest.score_max);
  make_dir(a.out);

  Trainer trainer(cfg, manifest.dims);
  const auto start = std::chrono::steady_clock::now();
  FitResult result = fit(trainer, train, val, norm, [&](const HistoryEntry& h) {
    if (!a.verbose) return;
    out << "epoch " << h.epoch << " train_loss " << num(h.train_loss) << " val_rho " << rho_text(h.val_rho)
        << " val_mse " << num(h.val_mse) << "\n";
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path dir(a.out);
  Checkpoint ckpt{cfg, manifest.dims, manifest.score_min, manifest.score_max, result.best};
  save_checkpoint((dir / "checkpoint.pidc").string(), ckpt);
  write_text(dir / "history.csv", history_csv(cfg, result.history));

  const auto& report_set = val.empty() ? train : val;
  std::vector<std::string> warnings;
  if (val.empty()) warnings.push_back("no validation samples; report and model selection use the train split");
  const SplitMetrics m = evaluate(trainer.model(), result.best, report_set, cfg.align_length, norm);
  write_text(dir / "report.json", report_json(cfg, manifest.category, m, report_set.size(), warnings));
  out << "trained " << result.history.size() << " epochs in " << std::fixed << std::setprecision(1) << seconds
      << std::defaultfloat << " s; best epoch "
      << result.best_epoch << ", " << (val.empty() ? "train" : "val") << " rho " << rho_text(m.rho) << ", mse "
      << num(m.mse) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "val";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const io::Split split = io::parse_split(a.split);
  const io::Manifest manifest = load_manifest(a.manifest);
  const LoadedModel loaded = load_model(a.checkpoint, manifest);
  const auto samples = load_samples(manifest, split);
  if (samples.empty()) throw ConfigError("split '" + a.split + "' has no samples");
  const io::LabelNorm norm = io::LabelNorm::from_range(loaded.ckpt.score_min, loaded.ckpt.score_max);
  const SplitMetrics m =
      evaluate(loaded.model, loaded.ckpt.params, samples, loaded.ckpt.config.align_length, norm);
  const std::string json = report_json(loaded.ckpt.config, manifest.category, m, samples.size(), {});
  if (a.out.empty()) {
    out << json;
  } else {
    write_text(a.out, json);
  }
  return kExitOk;
}

struct GradCheckArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::size_t> dims = {6, 6, 4};
  std::uint64_t seed = 0;
  std::string corrupt;
};

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out) {
  if (a.dims.size() != 3) throw ConfigError("--dims needs three values");
  TrainConfig cfg = TrainConfig::micro();
  if (!a.config.empty() || !a.overrides.empty()) {
    cfg = a.config.empty() ? TrainConfig::micro() : TrainConfig::load(a.config);
    for (const std::string& kv : a.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
  }
  const auto start = std::chrono::steady_clock::now();
  ModelGradCheck check;
  try {
    check = model_grad_check(cfg, {a.dims[0], a.dims[1], a.dims[2]}, a.seed, a.corrupt);
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& [module, err] : check.per_module) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-12s max relative error %.3e %s\n", module.c_str(), err,
                  err < kGradTolerance ? "ok" : "FAIL");
    out << line;
  }
  char summary[160];
  std::snprintf(summary, sizeof(summary), "%zu parameters checked in %.2f s; worst %s (%.3e)\n",
                check.parameter_count, seconds, check.report.worst_param.c_str(), check.report.max_rel_error);
  out << summary;
  if (check.report.max_rel_error < kGradTolerance) {
    out << "PASS\n";
    return kExitOk;
  }
  out << "FAIL: gradient mismatch in parameter " << check.report.worst_param << "\n";
  return kExitCheckFailed;
}

struct InspectArgs {
  std::string checkpoint;
  std::string manifest;
  std::string sample;
  std::string out;
};

int cmd_inspect_gates(const InspectArgs& a, std::ostream& out) {
  const io::Manifest manifest = load_manifest(a.manifest);
  const io::ManifestEntry* entry = manifest.find(a.sample);
  if (entry == nullptr) throw ConfigError("sample id '" + a.sample + "' not in manifest");
  const LoadedModel loaded = load_model(a.checkpoint, manifest);
  ModalityBundle bundle = io::read_sample(manifest.resolve(*entry));
  try {
    io::check_dims(bundle, manifest.dims, entry->id);
  } catch (const ShapeError& e) {
    throw DataError(e.what());
  }
  RngState unused(0);
  const ModalityBundle aligned = io::align(bundle, loaded.ckpt.config.align_length, Mode::eval, unused);
  std::vector<GateRecord> gates;
  const double prediction = loaded.model.predict(loaded.ckpt.params, aligned, &gates);

  std::string csv = config_comments(loaded.ckpt.config);
  csv += "# sample = " + entry->id + "\n";
  csv += "stage,role,t,sigma\n";
  std::size_t rows = 0;
  for (const auto& g : gates) {
    for (std::size_t t = 0; t < g.sigma.size(); ++t) {
      csv += std::to_string(g.stage) + "," + g.role + "," + std::to_string(t) + "," + num(g.sigma[t]) + "\n";
      ++rows;
    }
  }
  write_text(a.out, csv);
  out << "wrote " << rows << " gate rows for sample " << entry->id << " (prediction " << num(prediction) << ")\n";
  return kExitOk;
}

struct SweepArgs {
  std::string axis;
  std::vector<std::string> values;
  std::string config;
  std::vector<std::string> overrides;
  std::string manifest;
  std::string out;
  std::size_t seeds = 1;
  bool verbose = false;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const std::string key = axis_key(a.axis);
  const std::vector<std::string> values = expand_values(a.values);
  if (values.empty()) throw ConfigError("--values needs at least one value");
  if (a.seeds < 1) throw ConfigError("--seeds must be >= 1");
  const io::Manifest manifest = load_manifest(a.manifest);
  const TrainConfig base = resolve_config(a.config, a.overrides, &manifest);
  std::vector<TrainConfig> configs;
  for (const std::string& v : values) {
    TrainConfig cfg = base;
    cfg.set(key, v);
    cfg.validate();
    configs.push_back(cfg);
  }
  const auto train = load_samples(manifest, io::Split::train);
  const auto val = load_samples(manifest, io::Split::val);
  if (train.empty()) throw DataError("manifest has no training samples");
  const io::LabelNorm norm = io::LabelNorm::from_range(manifest.score_min, manifest.score_max);
  const auto& scored = val.empty() ? train : val;
  make_dir(a.out);

  std::string csv = config_comments(base);
  csv += "# axis = " + a.axis + "\n# seeds = " + std::to_string(a.seeds) + "\n";
  if (val.empty()) csv += "# no validation samples; scores use the train split\n";
  csv += "value,val_rho,val_mse\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<double> rhos, mses;
    for (std::size_t s = 0; s < a.seeds; ++s) {
      TrainConfig cfg = configs[i];
      cfg.seed = base.seed + s;
      Trainer trainer(cfg, manifest.dims);
      const FitResult result = fit(trainer, train, val, norm);
      const SplitMetrics m = evaluate(trainer.model(), result.best, scored, cfg.align_length, norm);
      if (m.rho) rhos.push_back(*m.rho);
      mses.push_back(m.mse);
      if (a.verbose) {
        out << a.axis << "=" << values[i] << " seed " << cfg.seed << " rho " << rho_text(m.rho) << " mse "
            << num(m.mse) << "\n";
      }
    }
    const std::optional<double> rho = rhos.empty() ? std::nullopt : std::optional<double>(median(rhos));
    csv += values[i] + "," + rho_text(rho) + "," + num(median(mses)) + "\n";
  }
  write_text(fs::path(a.out) / "sweep.csv", csv);
  out << "wrote " << values.size() << " rows to " << (fs::path(a.out) / "sweep.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PIDNet action quality regression toolkit"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write a synthetic corpus and manifest");
  gen_cmd->add_option("--n", gen.n, "Number of samples")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--dims", gen.dims, "Feature dims rgb,flow,audio")->delimiter(',')->expected(3);
  gen_cmd->add_option("--len-range", gen.len_range, "Sequence length range min,max")->delimiter(',')->expected(2);
  gen_cmd->add_option("--val-frac", gen.val_frac, "Fraction of samples in the val split");
  gen_cmd->add_option("--align-length", gen.align_length, "Alignment length recorded in the manifest");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, history and report");
  train_cmd->add_option("--config", tr.config, "Config file (key = value lines)");
  train_cmd->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_flag("--verbose", tr.verbose, "Print one line per epoch");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--split", ev.split, "train, val or test");
  eval_cmd->add_option("--out", ev.out, "Write the JSON report here instead of stdout");

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Compare analytic and numeric gradients of the full model");
  gc_cmd->add_option("--config", gc.config, "Config file (default: micro configuration)");
  gc_cmd->add_option("--set", gc.overrides, "Config override key=value (repeatable)");
  gc_cmd->add_option("--dims", gc.dims, "Feature dims rgb,flow,audio")->delimiter(',')->expected(3);
  gc_cmd->add_option("--seed", gc.seed, "Seed for parameters and inputs");
  gc_cmd->add_option("--corrupt", gc.corrupt)->group("");

  InspectArgs ig;
  auto* ig_cmd = app.add_subcommand("inspect-gates", "Write the gate values of one sample as CSV");
  ig_cmd->add_option("--checkpoint", ig.checkpoint, "Checkpoint file")->required();
  ig_cmd->add_option("--manifest", ig.manifest, "Dataset manifest")->required();
  ig_cmd->add_option("--sample", ig.sample, "Sample id")->required();
  ig_cmd->add_option("--out", ig.out, "Output CSV")->required();

  SweepArgs sw;
  auto* sw_cmd = app.add_subcommand("sweep", "Train one model per axis value and tabulate val metrics");
  sw_cmd->add_option("--axis", sw.axis, "alpha, k, n, fusion or ablation")->required();
  sw_cmd->add_option("--values", sw.values, "Axis values; integer ranges as a..b")->required()->expected(1, -1);
  sw_cmd->add_option("--config", sw.config, "Config file");
  sw_cmd->add_option("--set", sw.overrides, "Config override key=value (repeatable)");
  sw_cmd->add_option("--manifest", sw.manifest, "Dataset manifest")->required();
  sw_cmd->add_option("--out", sw.out, "Output directory")->required();
  sw_cmd->add_option("--seeds", sw.seeds, "Seeds per value; rows report medians");
  sw_cmd->add_flag("--verbose", sw.verbose, "Print one line per run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_synth(gen, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*gc_cmd) return cmd_grad_check(gc, out);
    if (*ig_cmd) return cmd_inspect_gates(ig, out);
    if (*sw_cmd) return cmd_sweep(sw, out);
  } catch (const CheckpointMismatch& e) {
    err << "error: checkpoint mismatch: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const io::FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}

}  // namespace pidnet
