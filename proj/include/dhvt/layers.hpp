#pragma once

// Parameter bundles shared by the model components.

#include <cstddef>

#include "dhvt/config.hpp"
#include "dhvt/ops.hpp"
#include "dhvt/param_store.hpp"

namespace dhvt {

// Rank-3 activation [B, T, D]. Token 0 is the class token, tokens 1..N are
// patch tokens in row-major grid order, and head tokens (inside attention
// only) follow the patches.
template <typename T>
struct TokenBatch {
  Tensor<T> tokens;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t length() const { return tokens.dim(1); }
  std::size_t dim() const { return tokens.dim(2); }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  static Linear make(ParamBuilder<T> pb, std::size_t in, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [Cout, Cin/groups, k, k]
  Tensor<T> bias;    // [Cout]
  Conv2dOptions options;

  static Conv2d make(ParamBuilder<T> pb, std::size_t in, std::size_t out, std::size_t kernel,
                     Conv2dOptions options);
  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::conv2d(x, weight, bias, options);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-6);

  static LayerNorm make(ParamBuilder<T> pb, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layernorm(x, gamma, beta, eps); }
};

// Normalization of a [B, C, H, W] feature map: BatchNorm over (B, H, W) or
// LayerNorm over C at every position.
template <typename T>
struct ConvNorm {
  NormKind kind = NormKind::kBatch;
  BatchNormState<T> bn;
  LayerNorm<T> ln;

  static ConvNorm make(ParamBuilder<T> pb, std::size_t channels, NormKind kind);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
};

// [B, C, H, W] -> [B, H*W, C]
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map);

// [B, H*W, C] -> [B, C, H, W]
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t height, std::size_t width);

}  // namespace dhvt
