#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pidnet/bundle.hpp"
#include "pidnet/ops.hpp"
#include "pidnet/rng.hpp"

namespace pidnet::io {

enum class Split { train, val, test };

Split parse_split(const std::string& name);
std::string to_string(Split split);

struct ManifestEntry {
  std::string id;
  std::string path;  // as written, relative to the manifest directory
  double score = 0.0;
  Split split = Split::train;
};

/// JSON-lines dataset index. The first line is a header:
///   {"type":"header","version":1,"dims":[dV,dF,dA],"score_min":..,"score_max":..,"align_length":L,"category":".."}
/// followed by one line per sample:
///   {"id":"..","path":"..","score":..,"split":"train|val|test"}
struct Manifest {
  std::array<std::size_t, 3> dims = {32, 32, 24};
  double score_min = 0.0;
  double score_max = 1.0;
  std::size_t align_length = 70;
  std::string category = "synthetic";
  std::vector<ManifestEntry> entries;
  std::string directory;  // set by load(); feature paths resolve against it

  /// Throws std::ios_base::failure when unreadable and std::invalid_argument
  /// on malformed content (score_min >= score_max, bad split, duplicate id).
  static Manifest load(const std::string& path);
  std::string to_jsonl() const;
  void save(const std::string& path) const;

  std::string resolve(const ManifestEntry& entry) const;
  const ManifestEntry* find(const std::string& id) const;
  std::vector<const ManifestEntry*> select(Split split) const;
};

/// Min-max label mapping fitted on training scores.
struct LabelNorm {
  double min = 0.0;
  double max = 1.0;

  /// Throws std::invalid_argument unless at least two distinct scores.
  static LabelNorm fit(std::span<const double> train_scores);
  /// Throws std::invalid_argument if max <= min.
  static LabelNorm from_range(double min, double max);

  /// Not clipped: out-of-range scores map outside [0, 1].
  double normalize(double score) const { return (score - min) / (max - min); }
  double denormalize(double y) const { return min + y * (max - min); }
};

/// One loaded sample with its raw and normalized label.
struct Sample {
  std::string id;
  ModalityBundle bundle;
  double raw_score = 0.0;
  double label = 0.0;
};

/// Reads every feature file of `split`, checks dims against the manifest and
/// normalizes labels with the manifest's train range.
std::vector<Sample> load_split(const Manifest& manifest, Split split);

/// Crops or zero-pads every modality to L rows. Train mode draws random crop
/// starts from `rng` (one shared fraction when `sync_crop`), eval mode
/// takes the centered window.
ModalityBundle align(const ModalityBundle& bundle, std::size_t length, Mode mode, RngState& rng,
                     bool sync_crop = false);

/// Checks every modality is non-empty and matches `dims`; throws ShapeError.
void check_dims(const ModalityBundle& bundle, const std::array<std::size_t, 3>& dims, const std::string& id = {});

struct SynthOptions {
  std::size_t n = 64;
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> dims = {32, 32, 24};
  std::size_t min_length = 16;
  std::size_t max_length = 24;
  double val_fraction = 0.25;
  std::size_t align_length = 16;
};

constexpr double kSynthNoise = 0.1;
constexpr double kSynthScoreNoise = 0.05;

/// Number of flow bursts planted for latent quality s.
std::size_t burst_count(double s);

/// Builds the features of one synthetic sample; noise comes from `rng`.
ModalityBundle synth_features(double s, std::size_t length, const std::array<std::size_t, 3>& dims, RngState& rng);

struct SynthSample {
  double quality = 0.0;
  double raw_score = 0.0;
  ModalityBundle bundle;
};

/// Sample i of a corpus; depends only on (seed, i, options).
SynthSample synth_sample(const SynthOptions& options, std::size_t index);

/// Writes n feature files and manifest.jsonl (last) into `out_dir`, creating
/// it if needed. The first round(n * (1 - val_fraction)) samples are train,
/// the rest val. Throws std::invalid_argument for n < 4 or bad ranges.
Manifest gen_synth(const SynthOptions& options, const std::string& out_dir);

}  // namespace pidnet::io
