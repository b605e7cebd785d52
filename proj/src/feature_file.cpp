#include "pidnet/feature_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <ios>

namespace pidnet::io {

namespace {

constexpr std::array<const char*, 3> kNames = {"rgb", "flow", "audio"};

const char* kind_label(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::bad_magic: return "bad magic";
    case FormatError::Kind::bad_version: return "unsupported version";
    case FormatError::Kind::truncated: return "truncated payload";
    case FormatError::Kind::duplicate_modality: return "duplicate modality";
    case FormatError::Kind::missing_modality: return "missing modality";
    case FormatError::Kind::unknown_modality: return "unknown modality";
    case FormatError::Kind::trailing_bytes: return "trailing bytes";
  }
  return "format error";
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatError::Kind::truncated, pos_,
                        std::string("expected ") + std::to_string(n) + " bytes for " + what + ", " +
                            std::to_string(remaining()) + " available");
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

FormatError::FormatError(Kind kind, std::size_t offset, const std::string& detail)
    : std::runtime_error(std::string(kind_label(kind)) + ": " + detail + " (byte offset " + std::to_string(offset) + ")"),
      kind_(kind),
      offset_(offset) {}

std::vector<std::uint8_t> encode_sample(const ModalityBundle& bundle) {
  std::vector<std::uint8_t> out = {'P', 'I', 'D', 'F'};
  put_u32(out, kFeatureFormatVersion);
  out.push_back(3);
  for (std::size_t m = 0; m < 3; ++m) {
    const std::string name = kNames[m];
    out.push_back(static_cast<std::uint8_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Tensor& x = bundle[m];
    put_u32(out, static_cast<std::uint32_t>(x.channels()));
    put_u32(out, static_cast<std::uint32_t>(x.time()));
    for (double v : x.data()) put_f64(out, v);
  }
  return out;
}

ModalityBundle decode_sample(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 && std::equal(bytes.begin(), bytes.end(), "PIDF")) r.need(4, "magic");
  if (r.remaining() < 4 || std::memcmp(bytes.data(), "PIDF", 4) != 0) {
    throw FormatError(FormatError::Kind::bad_magic, 0, "expected \"PIDF\"");
  }
  r.text(4, "magic");
  const std::size_t version_offset = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureFormatVersion) {
    throw FormatError(FormatError::Kind::bad_version, version_offset, "version " + std::to_string(version));
  }
  const std::uint8_t count = r.u8("modality count");
  ModalityBundle bundle;
  std::array<bool, 3> seen{};
  for (std::uint8_t k = 0; k < count; ++k) {
    const std::size_t name_offset = r.offset();
    const std::uint8_t len = r.u8("name length");
    const std::string name = r.text(len, "modality name");
    std::size_t m = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      if (name == kNames[i]) m = i;
    }
    if (m == 3) throw FormatError(FormatError::Kind::unknown_modality, name_offset, "'" + name + "'");
    if (seen[m]) throw FormatError(FormatError::Kind::duplicate_modality, name_offset, "'" + name + "'");
    seen[m] = true;
    const std::uint32_t t_len = r.u32("T");
    const std::uint32_t dim = r.u32("D");
    const std::size_t count_values = static_cast<std::size_t>(t_len) * dim;
    if (count_values / 8 > r.remaining() || r.remaining() < count_values * 8) {
      r.need(count_values * 8, "feature payload");
    }
    std::vector<double> data(count_values);
    for (double& v : data) v = r.f64();
    bundle[m] = Tensor(t_len, dim, std::move(data));
  }
  std::string missing;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!seen[i]) missing += (missing.empty() ? "" : ", ") + std::string(kNames[i]);
  }
  if (!missing.empty()) throw FormatError(FormatError::Kind::missing_modality, r.offset(), missing);
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::trailing_bytes, r.offset(), std::to_string(r.remaining()) + " extra bytes");
  }
  return bundle;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("write failed for " + path);
}

void write_sample(const std::string& path, const ModalityBundle& bundle) {
  write_file_bytes(path, encode_sample(bundle));
}

ModalityBundle read_sample(const std::string& path) { return decode_sample(read_file_bytes(path)); }

}  // namespace pidnet::io
