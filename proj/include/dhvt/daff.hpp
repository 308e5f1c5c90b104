#pragma once

// Dynamic aggregation feed-forward. Patch tokens run through a 1x1 / depth-wise
// 3x3 / 1x1 convolution pipeline on their spatial grid, with a shortcut around
// the depth-wise stage. The class token skips that pipeline and is instead
// rescaled channel-wise by a squeeze-excitation weight computed from the
// spatial average of the pipeline output.

#include <cstddef>

#include "dhvt/layers.hpp"

namespace dhvt {

template <typename T>
struct DaffParams {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  std::size_t se_ratio = 4;
  bool agg_on_all_tokens = false;
  bool disable_dw_shortcut = false;

  Conv2d<T> conv1;  // 1x1, dim -> hidden
  ConvNorm<T> norm1;
  Conv2d<T> conv2;  // 3x3 depth-wise on hidden channels
  ConvNorm<T> norm2;
  Conv2d<T> conv3;  // 1x1, hidden -> dim
  ConvNorm<T> norm3;
  Linear<T> compress;    // dim -> dim / se_ratio
  Linear<T> excitation;  // dim / se_ratio -> dim
};

struct DaffOptions {
  NormKind norm = NormKind::kBatch;
  bool agg_on_all_tokens = false;
  bool disable_dw_shortcut = false;
};

// Throws ConfigError unless dim is divisible by se_ratio.
template <typename T>
DaffParams<T> daff_init(ParamBuilder<T> pb, std::size_t dim, std::size_t hidden,
                        std::size_t se_ratio, DaffOptions options = {});

// Intermediate values exposed for inspection.
template <typename T>
struct DaffTrace {
  Tensor<T> se_weight;  // [B, 1, D]
};

// x: [B, N+1, D] with the class token first and N a perfect square.
template <typename T>
TokenBatch<T> daff_forward(DaffParams<T>& p, const TokenBatch<T>& x, Mode mode,
                           DaffTrace<T>* trace = nullptr);

// Side length of the square patch grid behind a sequence of `length` tokens
// (class token included). Throws ContractError/ShapeError when there is no
// class token or the patch count is not a perfect square.
std::size_t patch_grid_side(std::size_t length);

}  // namespace dhvt
