#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidnet/bundle.hpp"

// Binary container for the three per-sample feature sequences:
//
//   "PIDF"                 4 bytes magic
//   version                u32 little-endian, = 1
//   modality count         u8
//   per modality:
//     name length          u8, then that many ASCII bytes
//     T, D                 u32 each
//     T * D values         little-endian IEEE-754 binary64, time-major
//
// Names must be unique and exactly {rgb, flow, audio}.
namespace pidnet::io {

class FormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, duplicate_modality, missing_modality, unknown_modality, trailing_bytes };

  FormatError(Kind kind, std::size_t offset, const std::string& detail);

  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

constexpr std::uint32_t kFeatureFormatVersion = 1;

std::vector<std::uint8_t> encode_sample(const ModalityBundle& bundle);
ModalityBundle decode_sample(const std::vector<std::uint8_t>& bytes);

/// Throws std::ios_base::failure on I/O errors and FormatError on bad content.
void write_sample(const std::string& path, const ModalityBundle& bundle);
ModalityBundle read_sample(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace pidnet::io
