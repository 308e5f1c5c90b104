#pragma once

// Full classifier: patch embedding, class token, optional absolute position
// embedding, pre-norm encoder blocks, final LayerNorm and a linear head.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dhvt/config.hpp"
#include "dhvt/daff.hpp"
#include "dhvt/hi_mhsa.hpp"
#include "dhvt/sope.hpp"

namespace dhvt {

// Feed-forward used in place of DAFF when use_daff is false.
template <typename T>
struct FfnParams {
  FfnVariant variant = FfnVariant::kVanilla;
  std::size_t dim = 0;
  std::size_t hidden = 0;
  Linear<T> fc1;  // dim -> hidden
  Linear<T> fc2;  // hidden -> dim
  // kSplitClsAgg only.
  Linear<T> compress;
  Linear<T> excitation;
  // kSplitClsAvgPool only: fixed 3x3 mean kernel, depth-wise, not trainable.
  Tensor<T> pool_kernel;
};

template <typename T>
FfnParams<T> ffn_init(ParamBuilder<T> pb, FfnVariant variant, std::size_t dim, std::size_t hidden,
                      std::size_t se_ratio);

template <typename T>
TokenBatch<T> ffn_forward(const FfnParams<T>& p, const TokenBatch<T>& x);

// Non-overlapping P x P projection used when use_sope is false.
template <typename T>
struct PatchProjection {
  Conv2d<T> proj;
};

template <typename T>
struct BlockParams {
  LayerNorm<T> norm1;
  HiMhsaParams<T> attn;
  LayerNorm<T> norm2;
  bool use_daff = true;
  DaffParams<T> daff;
  FfnParams<T> ffn;
};

// Optional outputs of a forward pass.
template <typename T>
struct ForwardProbe {
  bool capture_attention = false;
  std::vector<Tensor<T>> attention;  // one [B, h, S, S] per block
  Tensor<T> class_token;             // [B, D] after the final norm
};

template <typename T>
class Model {
 public:
  // Validates the config (ConfigError) and initializes every parameter from
  // one generator seeded with `seed`.
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::vector<BlockParams<T>>& blocks() { return blocks_; }

  // images [B, C, H, W] -> logits [B, num_classes]. Throws ShapeError when the
  // images do not match the configured resolution.
  Tensor<T> forward(const Tensor<T>& images, Mode mode, ForwardProbe<T>* probe = nullptr);

  // Patch tokens with the class token prepended and position embedding added.
  TokenBatch<T> embed(const Tensor<T>& images, Mode mode);
  TokenBatch<T> block_forward(std::size_t index, const TokenBatch<T>& x, Mode mode,
                              AttentionTrace<T>* trace = nullptr);

  // Seeds the generator behind attention dropout.
  void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

 private:
  Model() = default;

  ModelConfig cfg_;
  ParamStore<T> store_;
  SopeParams<T> sope_;
  PatchProjection<T> patch_proj_;
  Tensor<T> cls_token_;  // [1, 1, D]
  Tensor<T> pos_embed_;  // [1, N+1, D] when enabled
  std::vector<BlockParams<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
  Rng dropout_rng_{0};
};

}  // namespace dhvt
