#include "pidnet/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "pidnet/errors.hpp"
#include "pidnet/feature_file.hpp"

namespace pidnet {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_text(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointMismatch("checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out = {'P', 'I', 'D', 'C'};
  put_u32(out, kCheckpointVersion);
  put_text(out, ckpt.config.to_text());
  for (std::size_t d : ckpt.dims) put_u32(out, static_cast<std::uint32_t>(d));
  put_f64(out, ckpt.score_min);
  put_f64(out, ckpt.score_max);
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const ParamEntry& e : ckpt.params.entries()) {
    put_text(out, e.name);
    out.push_back(e.trainable ? 1 : 0);
    out.push_back(2);
    put_u32(out, static_cast<std::uint32_t>(e.value.channels()));
    put_u32(out, static_cast<std::uint32_t>(e.value.time()));
    for (double v : e.value.data()) put_f64(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PIDC", 4) != 0) {
    throw CheckpointMismatch("not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  try {
    ckpt.config = TrainConfig::parse(r.text());
  } catch (const ConfigError& e) {
    throw CheckpointMismatch(std::string("checkpoint config echo invalid: ") + e.what());
  }
  for (auto& d : ckpt.dims) d = r.u32();
  ckpt.score_min = r.f64();
  ckpt.score_max = r.f64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.text();
    const bool trainable = r.u8() != 0;
    const std::uint8_t rank = r.u8();
    if (rank != 2) throw CheckpointMismatch("parameter " + name + ": unsupported rank " + std::to_string(rank));
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Tensor value(rows, cols);
    for (double& v : value.data()) v = r.f64();
    ckpt.params.add(name, std::move(value), trainable);
  }
  if (!r.done()) throw CheckpointMismatch("trailing bytes after checkpoint parameters");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file_bytes(path)); }

void verify_params(const PidnetModel& model, const ParamStore& params) {
  ParamStore expected;
  RngState rng(0);
  model.init(expected, rng);
  if (expected.size() != params.size()) {
    throw CheckpointMismatch("checkpoint holds " + std::to_string(params.size()) + " parameters, model expects " +
                             std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const ParamEntry& want = expected.entries()[i];
    const ParamEntry& got = params.entries()[i];
    if (want.name != got.name) {
      throw CheckpointMismatch("parameter " + std::to_string(i) + ": expected " + want.name + ", found " + got.name);
    }
    if (!want.value.same_shape(got.value) || want.trainable != got.trainable) {
      throw CheckpointMismatch("parameter " + want.name + ": expected shape " + want.value.shape() + ", found " +
                               got.value.shape());
    }
  }
}

void verify_dims(const Checkpoint& ckpt, const std::array<std::size_t, 3>& dims) {
  if (ckpt.dims != dims) {
    throw CheckpointMismatch("checkpoint feature dims (" + std::to_string(ckpt.dims[0]) + ", " +
                             std::to_string(ckpt.dims[1]) + ", " + std::to_string(ckpt.dims[2]) +
                             ") differ from manifest dims (" + std::to_string(dims[0]) + ", " +
                             std::to_string(dims[1]) + ", " + std::to_string(dims[2]) + ")");
  }
}

}  // namespace pidnet
