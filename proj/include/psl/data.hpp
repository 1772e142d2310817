#pragma once

#include "psl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace psl {

enum class Split { train, validation, test };
std::string to_string(Split split);

/// Images are N x C x H x W in [0, 1]; labels index class_names.
struct DatasetHandle {
  std::string name;
  Split split = Split::train;
  Tensor images;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  Index size() const { return static_cast<Index>(labels.size()); }
  /// Checks the pixel range, label range and image/label counts.
  void validate() const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr int kCifarSide = 32;

/// Parses one CIFAR-10 binary batch file: records of 1 label byte followed
/// by 1024 R, 1024 G and 1024 B bytes, each plane row-major 32x32.
DatasetHandle load_cifar10_file(const std::filesystem::path& file, Split split = Split::train);

/// train: every data_batch_*.bin in `dir` (sorted by name); test: test_batch.bin.
DatasetHandle load_cifar10(const std::filesystem::path& dir, Split split = Split::train);

/// Writes records in the same layout. Pixels are rounded to the nearest of 0..255.
void write_cifar10_file(const std::filesystem::path& file, const Tensor& images, const std::vector<int>& labels);

/// Synthetic desk dataset.
///
/// Each image starts at 0.5 grey. Class c then gets
///   - a colour offset of +colour on channel (c mod C) and -colour on channel
///     ((c + 1) mod C), plus a per-image, per-channel N(0, jitter) offset
///     shared by every pixel of that channel;
///   - a +-texture pattern: checkerboard, vertical stripes, horizontal
///     stripes, 2x2 checkerboard, 2-wide vertical stripes, 2-wide horizontal
///     stripes for c = 0..5;
///   - independent N(0, noise) pixel noise;
/// and is clipped to [0, 1]. With the default style the texture separates
/// the classes almost perfectly but is smaller than a 4/255 perturbation,
/// while the colour offset survives such perturbations but is blurred by
/// the jitter. Supports 1..6 classes (the textures stay distinct under
/// translation, which global pooling cannot see).
struct SyntheticStyle {
  int channels = 3;
  double colour = 0.03;
  double jitter = 0.05;
  double texture = 0.015;
  double noise = 0.05;
};

DatasetHandle make_synthetic(int num_classes, int samples_per_class, int resolution, std::uint64_t seed,
                             const SyntheticStyle& style = {});

struct SplitPair {
  DatasetHandle train;
  DatasetHandle validation;
};

/// Seeded hold-out split: a random `fraction` of examples becomes the validation split.
SplitPair split_validation(const DatasetHandle& data, double fraction, std::uint64_t seed);

/// Examples at the given indices, in order.
DatasetHandle subset(const DatasetHandle& data, const std::vector<std::size_t>& indices);

}  // namespace psl
