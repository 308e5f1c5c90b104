#pragma once

// Sequential overlapping patch embedding: a per-channel affine transform, a
// stack of stride-2 3x3 convolutions with normalization and GELU, a second
// affine transform, then flattening of the feature map into patch tokens.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dhvt/layers.hpp"

namespace dhvt {

// Diag(alpha) x + beta over the channel axis of a [B, C, H, W] map.
template <typename T>
struct AffineParams {
  Tensor<T> alpha;  // [C], initialized to 1
  Tensor<T> beta;   // [C], initialized to 0

  static AffineParams make(ParamBuilder<T> pb, std::size_t channels);
};

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const AffineParams<T>& p);

template <typename T>
struct SopeStage {
  Conv2d<T> conv;  // 3x3, stride 2, padding 1
  ConvNorm<T> norm;
  bool gelu_after = true;
};

template <typename T>
struct SopeParams {
  std::size_t patch_size = 0;
  std::size_t embed_dim = 0;
  bool use_affine = true;
  AffineParams<T> pre_affine;   // over the image channels
  AffineParams<T> post_affine;  // over embed_dim
  std::vector<SopeStage<T>> stages;

  std::size_t stage_count() const { return stages.size(); }
};

// Channel progression of the convolution stack, input channels first:
// P=16 -> [C, D/8, D/4, D/2, D], P=4 -> [C, D/2, D], P=2 -> [C, D].
// Throws ConfigError for any other patch size or an indivisible D.
std::vector<std::size_t> sope_channel_widths(std::size_t image_channels, std::size_t patch_size,
                                             std::size_t embed_dim);

// GELU follows every stage except the last, except that the single P=2 stage
// is followed by GELU as well.
bool sope_stage_has_gelu(std::size_t patch_size, std::size_t stage);

template <typename T>
SopeParams<T> sope_init(ParamBuilder<T> pb, std::size_t image_channels, std::size_t patch_size,
                        std::size_t embed_dim, NormKind norm = NormKind::kBatch,
                        bool use_affine = true);

// Standalone construction with its own generator.
template <typename T>
SopeParams<T> sope_init(std::size_t image_channels, std::size_t patch_size, std::size_t embed_dim,
                        std::uint64_t seed);

// images [B, C, H, W] -> patch tokens [B, H*W/P^2, D] in row-major grid order.
// No class token is added here.
template <typename T>
TokenBatch<T> sope_forward(SopeParams<T>& p, const Tensor<T>& images, Mode mode);

}  // namespace dhvt
