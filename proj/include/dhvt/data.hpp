#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dhvt/random.hpp"
#include "dhvt/tensor.hpp"

namespace dhvt {

// Images [N, C, H, W] with integer labels.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

// Per-channel mean/std applied as (x - mean) / std.
struct Normalization {
  std::array<float, 3> mean{0.5071f, 0.4865f, 0.4409f};
  std::array<float, 3> stddev{0.2673f, 0.2564f, 0.2762f};
};

enum class CifarKind { kCifar10, kCifar100 };
enum class CifarSplit { kTrain, kTest };

// Bytes per record: label byte(s) followed by 3072 pixel bytes (R, G, B planes).
std::size_t cifar_record_size(CifarKind kind);

// Decodes binary records into [0, 1] pixels. CIFAR-100 records use the fine
// label. Throws IoError with the expected and actual byte counts when the
// buffer is not a whole number of records.
Dataset decode_cifar(std::span<const std::uint8_t> bytes, CifarKind kind);

// Reads a CIFAR binary directory (train.bin/test.bin for CIFAR-100,
// data_batch_{1..5}.bin/test_batch.bin for CIFAR-10) and normalizes it.
Dataset load_cifar_binary(const std::filesystem::path& dir, CifarSplit split,
                          const Normalization& norm);

void normalize(Dataset& data, const Normalization& norm);

// Class-conditional Gaussian-blob images: every class has its own blob
// position and colour, and samples add pixel noise. Label i is i % classes.
// Throws ConfigError when classes < 2.
Dataset gen_synthetic(std::size_t classes, std::size_t n, std::size_t size, std::uint64_t seed);

// Gathers the given samples into a batch.
template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

// In-place random horizontal flip (p = 0.5) and/or random crop from a
// zero-padded copy (pad 4) of each image in a batch.
template <typename T>
void augment(Tensor<T>& batch, bool flip, bool crop, Rng& rng);

}  // namespace dhvt
