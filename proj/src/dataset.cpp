#include "pidnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ios>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pidnet/feature_file.hpp"

namespace pidnet::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const char* kModalityNames[] = {"rgb", "flow", "audio"};

}  // namespace

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open manifest " + path);
  Manifest m;
  m.directory = fs::path(path).parent_path().string();
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(where + "invalid JSON: " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("type", std::string()) != "header") throw std::invalid_argument("first line must be the header");
        const auto dims = j.at("dims").get<std::vector<std::size_t>>();
        if (dims.size() != 3) throw std::invalid_argument("dims needs three entries");
        for (std::size_t k = 0; k < 3; ++k) {
          if (dims[k] == 0) throw std::invalid_argument("dims must be positive");
          m.dims[k] = dims[k];
        }
        m.score_min = j.at("score_min").get<double>();
        m.score_max = j.at("score_max").get<double>();
        if (!(m.score_min < m.score_max)) throw std::invalid_argument("score_min must be below score_max");
        m.align_length = j.at("align_length").get<std::size_t>();
        m.category = j.value("category", std::string("default"));
        have_header = true;
        continue;
      }
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.score = j.at("score").get<double>();
      e.split = parse_split(j.at("split").get<std::string>());
      if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate sample id '" + e.id + "'");
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw std::invalid_argument(where + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  if (!have_header) throw std::invalid_argument(path + ": empty manifest");
  return m;
}

std::string Manifest::to_jsonl() const {
  std::ostringstream out;
  json header;
  header["type"] = "header";
  header["version"] = 1;
  header["dims"] = dims;
  header["score_min"] = score_min;
  header["score_max"] = score_max;
  header["align_length"] = align_length;
  header["category"] = category;
  out << header.dump() << '\n';
  for (const auto& e : entries) {
    json j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["score"] = e.score;
    j["split"] = to_string(e.split);
    out << j.dump() << '\n';
  }
  return out.str();
}

void Manifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot create " + path);
  out << to_jsonl();
  if (!out) throw std::ios_base::failure("write failed for " + path);
}

std::string Manifest::resolve(const ManifestEntry& entry) const {
  const fs::path p(entry.path);
  if (p.is_absolute() || directory.empty()) return p.string();
  return (fs::path(directory) / p).string();
}

const ManifestEntry* Manifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::vector<const ManifestEntry*> Manifest::select(Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(&e);
  }
  return out;
}

LabelNorm LabelNorm::fit(std::span<const double> train_scores) {
  if (train_scores.empty()) throw std::invalid_argument("label normalization needs training scores");
  const auto [lo, hi] = std::minmax_element(train_scores.begin(), train_scores.end());
  if (!(*lo < *hi)) throw std::invalid_argument("label normalization needs at least two distinct training scores");
  return LabelNorm{*lo, *hi};
}

LabelNorm LabelNorm::from_range(double min, double max) {
  if (!(min < max)) throw std::invalid_argument("label range needs min < max");
  return LabelNorm{min, max};
}

void check_dims(const ModalityBundle& bundle, const std::array<std::size_t, 3>& dims, const std::string& id) {
  for (std::size_t m = 0; m < 3; ++m) {
    const std::string who = (id.empty() ? std::string() : "sample '" + id + "' ") + kModalityNames[m];
    if (bundle.length(m) == 0) throw ShapeError(who + ": empty sequence");
    if (bundle.dim(m) != dims[m]) {
      throw ShapeError(who + ": feature dim " + std::to_string(bundle.dim(m)) + " does not match declared " +
                       std::to_string(dims[m]));
    }
  }
}

std::vector<Sample> load_split(const Manifest& manifest, Split split) {
  const LabelNorm norm = LabelNorm::from_range(manifest.score_min, manifest.score_max);
  std::vector<Sample> out;
  for (const ManifestEntry* e : manifest.select(split)) {
    Sample s;
    s.id = e->id;
    s.bundle = read_sample(manifest.resolve(*e));
    check_dims(s.bundle, manifest.dims, e->id);
    s.raw_score = e->score;
    s.label = norm.normalize(e->score);
    out.push_back(std::move(s));
  }
  return out;
}

ModalityBundle align(const ModalityBundle& bundle, std::size_t length, Mode mode, RngState& rng, bool sync_crop) {
  if (length < 1) throw std::invalid_argument("align: length must be >= 1");
  const double shared = (mode == Mode::train && sync_crop) ? rng.uniform() : 0.0;
  ModalityBundle out;
  for (std::size_t m = 0; m < 3; ++m) {
    const Tensor& x = bundle[m];
    const std::size_t t_len = x.channels();
    const std::size_t dim = x.time();
    Tensor y(length, dim, 0.0);
    if (t_len > length) {
      const std::size_t slack = t_len - length;
      std::size_t start = slack / 2;
      if (mode == Mode::train) {
        start = sync_crop ? std::min(slack, static_cast<std::size_t>(shared * static_cast<double>(slack + 1)))
                          : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(slack)));
      }
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(start * dim), length * dim, y.data().begin());
    } else {
      std::copy_n(x.data().begin(), t_len * dim, y.data().begin());
    }
    out[m] = std::move(y);
  }
  return out;
}

std::size_t burst_count(double s) {
  if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("latent quality must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor(8.0 * s)) + 1;
}

ModalityBundle synth_features(double s, std::size_t length, const std::array<std::size_t, 3>& dims, RngState& rng) {
  if (length < 1) throw std::invalid_argument("synthetic length must be >= 1");
  ModalityBundle b;
  for (std::size_t m = 0; m < 3; ++m) {
    Tensor x(length, dims[m]);
    for (double& v : x.data()) v = rng.normal(0.0, kSynthNoise);
    b[m] = std::move(x);
  }
  const double t_len = static_cast<double>(length);
  for (std::size_t t = 0; t < length; ++t) {
    b[kRgb](t, 0) = s * static_cast<double>(t) / t_len;
    b[kAudio](t, 0) = std::sin(2.0 * std::numbers::pi * (1.0 + 4.0 * s) * static_cast<double>(t) / t_len);
  }
  const std::size_t bursts = burst_count(s);
  for (std::size_t k = 0; k < bursts; ++k) {
    const auto t = static_cast<std::size_t>((static_cast<double>(k) + 0.5) * t_len / static_cast<double>(bursts));
    b[kFlow](std::min(t, length - 1), 0) += 1.0;
  }
  return b;
}

SynthSample synth_sample(const SynthOptions& options, std::size_t index) {
  RngState rng = RngState(options.seed).derive(index);
  SynthSample out;
  out.quality = rng.uniform();
  const auto length = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(options.min_length),
                                                                static_cast<std::int64_t>(options.max_length)));
  out.raw_score = 10.0 * out.quality + rng.normal(0.0, kSynthScoreNoise);
  out.bundle = synth_features(out.quality, length, options.dims, rng);
  return out;
}

Manifest gen_synth(const SynthOptions& options, const std::string& out_dir) {
  if (options.n < 4) throw std::invalid_argument("n must be >= 4, got " + std::to_string(options.n));
  if (options.min_length < 1 || options.min_length > options.max_length) {
    throw std::invalid_argument("length range must satisfy 1 <= min <= max");
  }
  if (!(options.val_fraction >= 0.0 && options.val_fraction < 1.0)) {
    throw std::invalid_argument("val fraction must lie in [0, 1)");
  }
  for (std::size_t d : options.dims) {
    if (d == 0) throw std::invalid_argument("feature dims must be positive");
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(static_cast<double>(options.n) * (1.0 - options.val_fraction)));
  if (n_train < 2) throw std::invalid_argument("val fraction leaves fewer than 2 training samples");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::ios_base::failure("cannot create directory " + out_dir + ": " + ec.message());

  Manifest manifest;
  manifest.dims = options.dims;
  manifest.align_length = options.align_length;
  manifest.category = "synthetic";
  manifest.directory = out_dir;
  std::vector<double> train_scores;
  for (std::size_t i = 0; i < options.n; ++i) {
    SynthSample s = synth_sample(options, i);
    char name[32];
    std::snprintf(name, sizeof(name), "s%05zu.pidf", i);
    write_sample((fs::path(out_dir) / name).string(), s.bundle);
    ManifestEntry e;
    e.id = std::string(name, 6);
    e.path = name;
    e.score = s.raw_score;
    e.split = i < n_train ? Split::train : Split::val;
    if (e.split == Split::train) train_scores.push_back(e.score);
    manifest.entries.push_back(std::move(e));
  }
  const LabelNorm norm = LabelNorm::fit(train_scores);
  manifest.score_min = norm.min;
  manifest.score_max = norm.max;
  manifest.save((fs::path(out_dir) / "manifest.jsonl").string());
  return manifest;
}

}  // namespace pidnet::io
