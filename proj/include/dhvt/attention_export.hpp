#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dhvt/model.hpp"

namespace dhvt {

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 255;
  std::vector<std::uint8_t> pixels;
};

// Binary (P5) greyscale, maxval 255.
void write_pgm(const std::filesystem::path& path, const PgmImage& image);
// Throws FormatError unless the file is a well-formed 8-bit P5 image.
PgmImage read_pgm(const std::filesystem::path& path);

// Min-max scales values to 0..255; a constant map becomes all zeros.
PgmImage to_pgm(const std::vector<double>& values, std::size_t width, std::size_t height);

// Runs `image` ([1, C, H, W]) through the model in eval mode and, for each
// requested block, writes
//   layer{L}_attn.csv       attention averaged over heads, S x S
//   layer{L}_head{j}.pgm    head token j's attention to the patch tokens in
//                           head j, on the patch grid (head tokens only)
// Returns the written paths. Throws ContractError naming the valid range when
// a layer index is out of range.
template <typename T>
std::vector<std::filesystem::path> export_attention(Model<T>& model, const Tensor<T>& image,
                                                    const std::vector<std::size_t>& layers,
                                                    const std::filesystem::path& out_dir);

}  // namespace dhvt
