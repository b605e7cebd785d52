#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "pidnet/tensor.hpp"

namespace pidnet {

/// Indices into ModalityBundle::features.
enum Modality : std::size_t { kRgb = 0, kFlow = 1, kAudio = 2 };

/// The three raw feature sequences of one sample, each stored time-major
/// (a Tensor with T rows of d columns: channels() == T, time() == d).
struct ModalityBundle {
  std::array<Tensor, 3> features;

  const Tensor& operator[](std::size_t m) const { return features[m]; }
  Tensor& operator[](std::size_t m) { return features[m]; }
  std::size_t length(std::size_t m) const { return features[m].channels(); }
  std::size_t dim(std::size_t m) const { return features[m].time(); }

  friend bool operator==(const ModalityBundle& a, const ModalityBundle& b) { return a.features == b.features; }
};

}  // namespace pidnet
