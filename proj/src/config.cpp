#include "pidnet/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "pidnet/errors.hpp"

namespace pidnet {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key == "channels") channels = parse_size(key, value);
    else if (key == "split_ratio") split_ratio = parse_double(key, value);
    else if (key == "bimamba_depth") bimamba_depth = parse_size(key, value);
    else if (key == "wavelet_levels") wavelet_levels = parse_size(key, value);
    else if (key == "wavelet_basis") wavelet_basis = wavelet::parse_basis(value);
    else if (key == "mkconv_k") mkconv_k = parse_size(key, value);
    else if (key == "heads") heads = parse_size(key, value);
    else if (key == "fusion_strategy") fusion_strategy = imw::parse_fusion(value);
    else if (key == "dropout") dropout = parse_double(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "clip_norm") clip_norm = parse_double(key, value);
    else if (key == "max_epochs") max_epochs = parse_size(key, value);
    else if (key == "patience") patience = parse_size(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "align_length") align_length = parse_size(key, value);
    else if (key == "sync_crop") sync_crop = parse_bool(key, value);
    else if (key == "ablation") ablation = imw::parse_ablation(value);
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void TrainConfig::validate() const {
  if (channels < 1) throw ConfigError("config key 'channels' must be >= 1");
  if (!(split_ratio > 0.0 && split_ratio <= 1.0)) throw ConfigError("config key 'split_ratio' must be in (0, 1]");
  if (bimamba_depth < 1) throw ConfigError("config key 'bimamba_depth' must be >= 1");
  if (wavelet_levels < 1) throw ConfigError("config key 'wavelet_levels' must be >= 1");
  if (mkconv_k < 1) throw ConfigError("config key 'mkconv_k' must be >= 1");
  if (heads < 1 || channels % heads != 0) throw ConfigError("config key 'heads' must divide 'channels'");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("config key 'dropout' must be in [0, 1)");
  if (!(lr >= 0.0)) throw ConfigError("config key 'lr' must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("config key 'weight_decay' must be >= 0");
  if (batch_size < 1) throw ConfigError("config key 'batch_size' must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("config key 'clip_norm' must be > 0");
  if (align_length < 1) throw ConfigError("config key 'align_length' must be >= 1");
  try {
    PidnetModel(model_config({1, 1, 1})).validate_length(align_length);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config key 'align_length': ") + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_pairs() const {
  return {
      {"channels", std::to_string(channels)},
      {"split_ratio", format_double(split_ratio)},
      {"bimamba_depth", std::to_string(bimamba_depth)},
      {"wavelet_levels", std::to_string(wavelet_levels)},
      {"wavelet_basis", wavelet::to_string(wavelet_basis)},
      {"mkconv_k", std::to_string(mkconv_k)},
      {"heads", std::to_string(heads)},
      {"fusion_strategy", imw::to_string(fusion_strategy)},
      {"dropout", format_double(dropout)},
      {"lr", format_double(lr)},
      {"weight_decay", format_double(weight_decay)},
      {"batch_size", std::to_string(batch_size)},
      {"clip_norm", format_double(clip_norm)},
      {"max_epochs", std::to_string(max_epochs)},
      {"patience", std::to_string(patience)},
      {"seed", std::to_string(seed)},
      {"align_length", std::to_string(align_length)},
      {"sync_crop", sync_crop ? "true" : "false"},
      {"ablation", imw::to_string(ablation)},
  };
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) out += k + " = " + v + "\n";
  return out;
}

TrainConfig TrainConfig::parse(std::string_view text, std::set<std::string>* keys_seen) {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    cfg.set(key, value);
  }
  cfg.validate();
  if (keys_seen != nullptr) keys_seen->insert(seen.begin(), seen.end());
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path, std::set<std::string>* keys_seen) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), keys_seen);
}

ModelConfig TrainConfig::model_config(const std::array<std::size_t, 3>& dims) const {
  ModelConfig m;
  m.block.channels = channels;
  m.block.split_ratio = split_ratio;
  m.block.bimamba_depth = bimamba_depth;
  m.block.wavelet_levels = wavelet_levels;
  m.block.wavelet_basis = wavelet_basis;
  m.block.fusion = fusion_strategy;
  m.block.dropout = dropout;
  m.block.ablation = ablation;
  m.mkconv_k = mkconv_k;
  m.heads = heads;
  m.dims = dims;
  return m;
}

TrainConfig TrainConfig::micro() {
  TrainConfig c;
  c.channels = 8;
  c.align_length = 8;
  c.bimamba_depth = 1;
  c.wavelet_levels = 1;
  c.mkconv_k = 2;
  c.heads = 2;
  c.dropout = 0.0;
  c.batch_size = 2;
  return c;
}

}  // namespace pidnet
