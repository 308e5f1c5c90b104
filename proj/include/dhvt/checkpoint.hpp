#pragma once

// Binary checkpoint layout (little-endian):
//   "DHVT" | u32 version | u32 n + n bytes config JSON | u64 tensor count |
//   per tensor: u32 n + name | u32 rank | u64 extents[rank] | u8 dtype
//               (0 = f32, 1 = f64) | raw values |
//   u32 CRC32 of every byte after the version field.
// BatchNorm running statistics are stored alongside the trainable tensors.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dhvt/model.hpp"

namespace dhvt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ParamStore<T> params;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg);

// Throws FormatError on bad magic, unsupported version, CRC mismatch or a
// malformed payload. Stored values are converted to T.
template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg,
                     const std::filesystem::path& path);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Copies stored values into a model. Throws ConsistencyError when tensor
// count, names or shapes disagree with the model's config.
template <typename T>
void restore(Model<T>& model, const ParamStore<T>& stored);

// Builds the model described by the checkpoint and restores its values.
template <typename T>
Model<T> load_model(const std::filesystem::path& path);

}  // namespace dhvt
