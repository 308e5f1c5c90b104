#include "dhvt/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "dhvt/error.hpp"

namespace dhvt {
namespace {

constexpr std::size_t kPixels = 3 * 32 * 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::size_t cifar_record_size(CifarKind kind) {
  return (kind == CifarKind::kCifar100 ? 2 : 1) + kPixels;
}

Dataset decode_cifar(std::span<const std::uint8_t> bytes, CifarKind kind) {
  const std::size_t stride = cifar_record_size(kind);
  if (bytes.size() % stride != 0) {
    const std::size_t expected = (bytes.size() / stride + 1) * stride;
    throw IoError("truncated CIFAR data: expected " + std::to_string(expected) + " bytes (" +
                  std::to_string(stride) + " per record), got " + std::to_string(bytes.size()));
  }
  const std::size_t n = bytes.size() / stride;
  const std::size_t label_bytes = stride - kPixels;
  Dataset data;
  data.num_classes = kind == CifarKind::kCifar100 ? 100 : 10;
  data.images = Tensor<float>({n, 3, 32, 32});
  data.labels.resize(n);
  auto pixels = data.images.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* record = bytes.data() + i * stride;
    data.labels[i] = record[label_bytes - 1];
    for (std::size_t p = 0; p < kPixels; ++p)
      pixels[i * kPixels + p] = static_cast<float>(record[label_bytes + p]) / 255.0f;
  }
  return data;
}

void normalize(Dataset& data, const Normalization& norm) {
  if (data.size() == 0) return;
  const std::size_t c = data.images.dim(1);
  const std::size_t plane = data.images.dim(2) * data.images.dim(3);
  auto v = data.images.mutable_values();
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float m = norm.mean[ch % 3];
      const float s = norm.stddev[ch % 3];
      float* p = v.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - m) / s;
    }
}

Dataset load_cifar_binary(const std::filesystem::path& dir, CifarSplit split,
                          const Normalization& norm) {
  std::vector<std::filesystem::path> files;
  CifarKind kind;
  if (std::filesystem::exists(dir / "train.bin") || std::filesystem::exists(dir / "test.bin")) {
    kind = CifarKind::kCifar100;
    files.push_back(dir / (split == CifarSplit::kTrain ? "train.bin" : "test.bin"));
  } else if (std::filesystem::exists(dir / "test_batch.bin") ||
             std::filesystem::exists(dir / "data_batch_1.bin")) {
    kind = CifarKind::kCifar10;
    if (split == CifarSplit::kTrain) {
      for (int i = 1; i <= 5; ++i)
        files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      files.push_back(dir / "test_batch.bin");
    }
  } else {
    throw IoError("no CIFAR binary files (train.bin/test.bin or data_batch_N.bin) in " +
                  dir.string());
  }
  std::vector<std::uint8_t> bytes;
  for (const auto& f : files) {
    const auto part = read_file(f);
    if (part.size() % cifar_record_size(kind) != 0) decode_cifar(part, kind);  // throws
    bytes.insert(bytes.end(), part.begin(), part.end());
  }
  Dataset data = decode_cifar(bytes, kind);
  normalize(data, norm);
  return data;
}

Dataset gen_synthetic(std::size_t classes, std::size_t n, std::size_t size, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (size == 0) throw ConfigError("synthetic image size must be positive");
  Rng rng(seed);
  const double s = static_cast<double>(size);
  const double sigma = s / 6.0;

  struct Blob {
    double cx, cy;
    std::array<double, 3> colour;
  };
  std::vector<Blob> blobs(classes);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < classes; ++k) {
    const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(k) /
                                     static_cast<double>(classes);
    blobs[k].cx = s / 2.0 + s / 4.0 * std::cos(angle);
    blobs[k].cy = s / 2.0 + s / 4.0 * std::sin(angle);
    for (auto& c : blobs[k].colour) c = rng.uniform(0.5, 1.0);
  }

  Dataset data;
  data.num_classes = classes;
  data.images = Tensor<float>({n, 3, size, size});
  data.labels.resize(n);
  auto v = data.images.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    data.labels[i] = static_cast<int>(k);
    const Blob& b = blobs[k];
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - b.cx;
          const double dy = static_cast<double>(y) + 0.5 - b.cy;
          const double blob = b.colour[c] * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          v[((i * 3 + c) * size + y) * size + x] = static_cast<float>(blob + 0.1 * rng.normal());
        }
  }
  return data;
}

template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  Shape shape = data.images.shape();
  const std::size_t per = data.images.numel() / shape[0];
  shape[0] = indices.size();
  Tensor<T> out(shape);
  auto dst = out.mutable_values();
  const auto src = data.images.values();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= data.size())
      throw ContractError("sample index " + std::to_string(indices[b]) + " out of range");
    for (std::size_t k = 0; k < per; ++k)
      dst[b * per + k] = static_cast<T>(src[indices[b] * per + k]);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels.at(i));
  return out;
}

template <typename T>
void augment(Tensor<T>& batch, bool flip, bool crop, Rng& rng) {
  if (!flip && !crop) return;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  constexpr long kPad = 4;
  auto v = batch.mutable_values();
  std::vector<T> src(c * h * w);
  for (std::size_t i = 0; i < n; ++i) {
    T* img = v.data() + i * c * h * w;
    std::copy(img, img + src.size(), src.begin());
    const bool mirror = flip && rng.uniform() < 0.5;
    long oy = 0, ox = 0;
    if (crop) {
      oy = static_cast<long>(rng.below(2 * kPad + 1)) - kPad;
      ox = static_cast<long>(rng.below(2 * kPad + 1)) - kPad;
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) + oy;
          long sx = static_cast<long>(x) + ox;
          if (mirror) sx = static_cast<long>(w) - 1 - sx;
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) &&
                              sx < static_cast<long>(w);
          img[(ch * h + y) * w + x] = inside ? src[(ch * h + sy) * w + sx] : T(0);
        }
  }
}

template Tensor<float> gather_images(const Dataset&, std::span<const std::size_t>);
template Tensor<double> gather_images(const Dataset&, std::span<const std::size_t>);
template void augment(Tensor<float>&, bool, bool, Rng&);
template void augment(Tensor<double>&, bool, bool, Rng&);

}  // namespace dhvt
