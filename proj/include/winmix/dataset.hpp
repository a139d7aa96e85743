#pragma once

#include <winmix/tensor.hpp>

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace winmix {

/// Class-conditional oriented gratings. Class c is a sinusoid at angle
/// pi * c / classes; phase, frequency and contrast jitter per sample, plus
/// Gaussian pixel noise.
struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t samples = 2000; // train + val
  std::size_t classes = 4;
  std::size_t size = 32;
  std::size_t channels = 3;
  double noise = 0.35;          // pixel noise std
  double phase_jitter = 2.2;    // phase ~ U(-j, j) radians
  double frequency = 4.0;       // cycles per image
  double frequency_jitter = 0.15; // relative
  double val_fraction = 0.2;
  /// Left and right halves carry independent orientations and the label is
  /// whether they agree; solving it needs evidence from both halves.
  bool paired_halves = false;

  void validate() const;
};

void to_json(nlohmann::json &j, const DatasetSpec &s);
void from_json(const nlohmann::json &j, DatasetSpec &s);

/// Images stored [N, H, W, C] as floats in roughly [0, 1].
struct Dataset {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t classes() const;
  /// Gathers samples in the given order into one batch [n, H, W, C].
  template <typename T> Tensor<T> images(std::span<const std::size_t> indices) const;
  template <typename T> Tensor<T> images() const;
};

struct DatasetSplit {
  Dataset train, val;
};

/// Deterministic per spec; class-balanced; the first val_fraction of every
/// class goes to val.
DatasetSplit gen_dataset(const DatasetSpec &spec);

/// WDAT: magic "WDAT", u32 count, u16 height, u16 width, u16 channels, then
/// count*H*W*C u8 pixels and count u16 labels. Pixels map to [0, 1].
void save_wdat(const std::string &path, const Dataset &data);
Dataset load_wdat(const std::string &path);

/// Accuracy of classifying `test` by the nearest per-class mean image of
/// `train` (squared Euclidean distance on raw pixels).
double nearest_centroid_accuracy(const Dataset &train, const Dataset &test);

} // namespace winmix
