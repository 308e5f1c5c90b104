#pragma once

// Multi-head self-attention extended with head tokens. Each token is split
// into h channel groups of width d = D/h; every group is averaged over the
// whole sequence (class token included), projected back to D, normalized and
// activated to form h head tokens. They join the sequence for ordinary
// scaled-dot-product attention and their outputs are averaged into the class
// token afterwards.

#include <cstddef>

#include "dhvt/layers.hpp"

namespace dhvt {

template <typename T>
struct HiMhsaParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  bool use_head_token = true;
  double attn_dropout = 0.0;

  Linear<T> qkv;   // D -> 3D
  Linear<T> proj;  // D -> D
  // Head-token branch; left undefined when use_head_token is false at init.
  Linear<T> ht_proj;     // d -> D
  LayerNorm<T> ht_norm;  // over d
  Tensor<T> head_embed;  // [h, D], zeros at init

  std::size_t head_dim() const { return dim / heads; }
  T scale() const;
};

// Throws ConfigError when dim is not divisible by heads.
template <typename T>
HiMhsaParams<T> hi_mhsa_init(ParamBuilder<T> pb, std::size_t dim, std::size_t heads,
                             bool use_head_token = true, double attn_dropout = 0.0);

// [B, N+1, D] -> head tokens [B, h, D].
template <typename T>
Tensor<T> make_head_tokens(const HiMhsaParams<T>& p, const TokenBatch<T>& x);

template <typename T>
struct AttentionTrace {
  Tensor<T> probs;  // [B, h, S, S] with S = N+1+h (head tokens) or N+1
};

// [B, N+1, D] -> [B, N+1, D]. `dropout_rng` is only consulted in train mode
// with a non-zero attention dropout rate.
template <typename T>
TokenBatch<T> hi_mhsa_forward(const HiMhsaParams<T>& p, const TokenBatch<T>& x,
                              Mode mode = Mode::kEval, Rng* dropout_rng = nullptr,
                              AttentionTrace<T>* trace = nullptr);

}  // namespace dhvt
