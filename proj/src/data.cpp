#include "psl/data.hpp"

#include "psl/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace psl {

namespace {

const std::vector<std::string> kCifarClasses = {"airplane", "automobile", "bird",  "cat",  "deer",
                                                "dog",      "frog",       "horse", "ship", "truck"};

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

void DatasetHandle::validate() const {
  if (images.rank() != 4) throw std::invalid_argument(name + ": images must be N x C x H x W");
  if (images.dim(0) != size()) throw std::invalid_argument(name + ": image and label counts differ");
  if (images.size() > 0 && (images.data().minCoeff() < 0.0 || images.data().maxCoeff() > 1.0)) {
    throw std::invalid_argument(name + ": pixel values outside [0, 1]");
  }
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(class_names.size())) {
      throw std::invalid_argument(name + ": label " + std::to_string(y) + " outside the class list");
    }
  }
}

DatasetHandle load_cifar10_file(const std::filesystem::path& file, Split split) {
  const std::string bytes = read_file(file);
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t whole = bytes.size() / kCifarRecordBytes;
    throw std::runtime_error(file.string() + ": length " + std::to_string(bytes.size()) +
                             " is not a multiple of 3073; partial record at byte offset " +
                             std::to_string(whole * kCifarRecordBytes));
  }
  const Index n = static_cast<Index>(bytes.size() / kCifarRecordBytes);
  constexpr Index kPixels = 3 * kCifarSide * kCifarSide;
  DatasetHandle data{"cifar10", split, Tensor(Shape{n, 3, kCifarSide, kCifarSide}), {}, kCifarClasses};
  data.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::size_t offset = static_cast<std::size_t>(i) * kCifarRecordBytes;
    const auto label = static_cast<unsigned char>(bytes[offset]);
    if (label > 9) {
      throw std::runtime_error(file.string() + ": label byte " + std::to_string(label) + " at offset " +
                               std::to_string(offset) + " exceeds 9");
    }
    data.labels[static_cast<std::size_t>(i)] = label;
    for (Index p = 0; p < kPixels; ++p) {
      data.images[i * kPixels + p] = static_cast<unsigned char>(bytes[offset + 1 + static_cast<std::size_t>(p)]) / 255.0;
    }
  }
  return data;
}

DatasetHandle load_cifar10(const std::filesystem::path& dir, Split split) {
  std::vector<std::filesystem::path> files;
  if (split == Split::test) {
    files.push_back(dir / "test_batch.bin");
  } else {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("data_batch_") && name.ends_with(".bin")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error(dir.string() + ": no data_batch_*.bin files");
  }
  std::vector<DatasetHandle> parts;
  Index total = 0;
  for (const auto& f : files) {
    parts.push_back(load_cifar10_file(f, split));
    total += parts.back().size();
  }
  if (parts.size() == 1) return std::move(parts.front());
  DatasetHandle all{"cifar10", split, Tensor(Shape{total, 3, kCifarSide, kCifarSide}), {}, kCifarClasses};
  Index offset = 0;
  for (const auto& p : parts) {
    all.images.data().segment(offset, p.images.size()) = p.images.data();
    offset += p.images.size();
    all.labels.insert(all.labels.end(), p.labels.begin(), p.labels.end());
  }
  return all;
}

void write_cifar10_file(const std::filesystem::path& file, const Tensor& images, const std::vector<int>& labels) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kCifarSide || images.dim(3) != kCifarSide) {
    throw std::invalid_argument("CIFAR-10 records hold N x 3 x 32 x 32 images, got " + shape_string(images.shape()));
  }
  if (images.dim(0) != static_cast<Index>(labels.size())) throw std::invalid_argument("image and label counts differ");
  constexpr Index kPixels = 3 * kCifarSide * kCifarSide;
  std::string bytes;
  bytes.reserve(labels.size() * kCifarRecordBytes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 9) throw std::invalid_argument("CIFAR-10 labels must be in 0..9");
    bytes.push_back(static_cast<char>(labels[i]));
    for (Index p = 0; p < kPixels; ++p) {
      const double v = std::clamp(images[static_cast<Index>(i) * kPixels + p], 0.0, 1.0);
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DatasetHandle make_synthetic(int num_classes, int samples_per_class, int resolution, std::uint64_t seed,
                             const SyntheticStyle& style) {
  const int channels = style.channels;
  if (num_classes < 1 || num_classes > 6) throw std::invalid_argument("synthetic data supports 1..6 classes");
  if (resolution < 4) throw std::invalid_argument("synthetic resolution must be at least 4");
  if (samples_per_class < 0) throw std::invalid_argument("samples_per_class must be nonnegative");
  if (channels < 1) throw std::invalid_argument("channels must be positive");

  const double kColour = style.colour;
  const double kJitter = style.jitter;
  const double kTexture = style.texture;
  const double kNoise = style.noise;

  const Index r = resolution;
  const Index c = channels;
  const Index n = static_cast<Index>(num_classes) * samples_per_class;
  DatasetHandle data{"synthetic", Split::train, Tensor(Shape{n, c, r, r}), {}, {}};
  for (int k = 0; k < num_classes; ++k) data.class_names.push_back("class" + std::to_string(k));

  auto texture = [](int pattern, Index y, Index x) -> double {
    switch (pattern) {
      case 0: return (x + y) % 2 == 0 ? 1.0 : -1.0;
      case 1: return x % 2 == 0 ? 1.0 : -1.0;
      case 2: return y % 2 == 0 ? 1.0 : -1.0;
      case 3: return (x / 2 + y / 2) % 2 == 0 ? 1.0 : -1.0;
      case 4: return (x / 2) % 2 == 0 ? 1.0 : -1.0;
      default: return (y / 2) % 2 == 0 ? 1.0 : -1.0;
    }
  };

  Rng rng(seed);
  Index i = 0;
  for (int s = 0; s < samples_per_class; ++s) {
    for (int label = 0; label < num_classes; ++label, ++i) {
      data.labels.push_back(label);
      for (Index ch = 0; ch < c; ++ch) {
        double offset = rng.normal() * kJitter;
        if (c > 1) {
          if (ch == label % c) offset += kColour;
          if (ch == (label + 1) % c) offset -= kColour;
        }
        for (Index y = 0; y < r; ++y) {
          for (Index x = 0; x < r; ++x) {
            const double v = 0.5 + offset + kTexture * texture(label, y, x) + kNoise * rng.normal();
            data.images[((i * c + ch) * r + y) * r + x] = std::clamp(v, 0.0, 1.0);
          }
        }
      }
    }
  }
  return data;
}

DatasetHandle subset(const DatasetHandle& data, const std::vector<std::size_t>& indices) {
  Shape shape = data.images.shape();
  const Index row = data.size() == 0 ? 0 : data.images.size() / data.size();
  shape[0] = static_cast<Index>(indices.size());
  DatasetHandle out{data.name, data.split, Tensor(shape), {}, data.class_names};
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto src = static_cast<Index>(indices[j]);
    if (src >= data.size()) throw std::out_of_range("subset index " + std::to_string(src) + " out of range");
    out.images.data().segment(static_cast<Index>(j) * row, row) = data.images.data().segment(src * row, row);
    out.labels.push_back(data.labels[indices[j]]);
  }
  return out;
}

SplitPair split_validation(const DatasetHandle& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("validation fraction must be in [0, 1)");
  Rng rng(seed);
  auto order = rng.permutation(static_cast<std::size_t>(data.size()));
  const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  SplitPair pair{subset(data, train), subset(data, val)};
  pair.validation.split = Split::validation;
  return pair;
}

}  // namespace psl
