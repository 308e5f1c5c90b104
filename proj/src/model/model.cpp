#include "dhvt/model.hpp"

#include "dhvt/error.hpp"

namespace dhvt {
namespace {

template <typename T>
Tensor<T> squeeze_excite(const Linear<T>& compress, const Linear<T>& excitation,
                         const Tensor<T>& patches) {
  // patches [B, N, D] -> weight [B, 1, D]
  const Tensor<T> pooled = ops::mean(patches, 1, true);
  return excitation(ops::gelu(compress(pooled)));
}

}  // namespace

template <typename T>
FfnParams<T> ffn_init(ParamBuilder<T> pb, FfnVariant variant, std::size_t dim, std::size_t hidden,
                      std::size_t se_ratio) {
  FfnParams<T> p;
  p.variant = variant;
  p.dim = dim;
  p.hidden = hidden;
  p.fc1 = Linear<T>::make(pb.scope("fc1"), dim, hidden);
  p.fc2 = Linear<T>::make(pb.scope("fc2"), hidden, dim);
  if (variant == FfnVariant::kSplitClsAgg) {
    if (se_ratio == 0 || dim % se_ratio != 0)
      throw ConfigError("squeeze-excitation ratio " + std::to_string(se_ratio) +
                        " does not divide dim " + std::to_string(dim));
    p.compress = Linear<T>::make(pb.scope("compress"), dim, dim / se_ratio);
    p.excitation = Linear<T>::make(pb.scope("excitation"), dim / se_ratio, dim);
  }
  if (variant == FfnVariant::kSplitClsAvgPool)
    p.pool_kernel = Tensor<T>::full({hidden, 1, 3, 3}, T(1) / T(9));
  return p;
}

template <typename T>
TokenBatch<T> ffn_forward(const FfnParams<T>& p, const TokenBatch<T>& x) {
  if (x.tokens.rank() != 3 || x.dim() != p.dim)
    throw ShapeError("feed-forward expects tokens (B, T, " + std::to_string(p.dim) + "), got " +
                     shape_str(x.tokens.shape()));
  if (p.variant == FfnVariant::kVanilla)
    return TokenBatch<T>{p.fc2(ops::gelu(p.fc1(x.tokens)))};

  const std::size_t len = x.length();
  if (len < 2) throw ContractError("split feed-forward needs patch tokens after the class token");
  const Tensor<T> cls = ops::narrow(x.tokens, 1, 0, 1);
  const Tensor<T> patches = ops::narrow(x.tokens, 1, 1, len - 1);

  Tensor<T> h = ops::gelu(p.fc1(patches));
  if (p.variant == FfnVariant::kSplitClsAvgPool) {
    const std::size_t side = patch_grid_side(len);
    const Tensor<T> map = tokens_to_map(h, side, side);
    const Tensor<T> pooled =
        ops::conv2d(map, p.pool_kernel, Tensor<T>{}, Conv2dOptions{1, 1, p.hidden});
    h = ops::add(h, map_to_tokens(pooled));
  }
  const Tensor<T> out = p.fc2(h);

  Tensor<T> cls_out = cls;
  if (p.variant == FfnVariant::kSplitClsAgg)
    cls_out = ops::mul(cls, squeeze_excite(p.compress, p.excitation, out));
  return TokenBatch<T>{ops::concat<T>({cls_out, out}, 1)};
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Model model;
  model.cfg_ = cfg;
  Rng rng(seed);
  ParamBuilder<T> pb(model.store_, rng);
  const std::size_t dim = cfg.embed_dim;

  if (cfg.use_sope) {
    model.sope_ = sope_init(pb.scope("patch_embed"), cfg.in_channels, cfg.patch_size, dim,
                            cfg.norm_policy.embed, cfg.use_affine);
  } else {
    model.patch_proj_.proj =
        Conv2d<T>::make(pb.scope("patch_embed.proj"), cfg.in_channels, dim, cfg.patch_size,
                        Conv2dOptions{cfg.patch_size, 0, 1});
  }
  model.cls_token_ = pb.trunc_normal("cls_token", {1, 1, dim});
  if (cfg.use_abs_pos_embed)
    model.pos_embed_ = pb.trunc_normal("pos_embed", {1, cfg.num_patches() + 1, dim});

  for (std::size_t i = 0; i < cfg.depth; ++i) {
    ParamBuilder<T> bp = pb.scope("blocks." + std::to_string(i));
    BlockParams<T> block;
    block.norm1 = LayerNorm<T>::make(bp.scope("norm1"), dim);
    block.attn = hi_mhsa_init(bp.scope("attn"), dim, cfg.num_heads, cfg.use_head_token,
                              cfg.attn_dropout);
    block.norm2 = LayerNorm<T>::make(bp.scope("norm2"), dim);
    block.use_daff = cfg.use_daff;
    if (cfg.use_daff) {
      block.daff = daff_init(bp.scope("mlp"), dim, cfg.hidden_dim(), cfg.se_ratio,
                             DaffOptions{cfg.norm_policy.ffn, cfg.agg_on_all_tokens,
                                         cfg.disable_dw_shortcut});
    } else {
      block.ffn = ffn_init(bp.scope("mlp"), cfg.ffn_variant, dim, cfg.hidden_dim(), cfg.se_ratio);
    }
    model.blocks_.push_back(std::move(block));
  }
  model.norm_ = LayerNorm<T>::make(pb.scope("norm"), dim);
  model.head_ = Linear<T>::make(pb.scope("head"), dim, cfg.num_classes);
  return model;
}

template <typename T>
TokenBatch<T> Model<T>::embed(const Tensor<T>& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels ||
      images.dim(2) != cfg_.image_height || images.dim(3) != cfg_.image_width)
    throw ShapeError("model expects images (B, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.image_height) + ", " + std::to_string(cfg_.image_width) +
                     "), got " + shape_str(images.shape()));
  const std::size_t batch = images.dim(0);
  const Tensor<T> patches = cfg_.use_sope ? sope_forward(sope_, images, mode).tokens
                                          : map_to_tokens(patch_proj_.proj(images));
  const Tensor<T> cls = ops::broadcast_to(cls_token_, {batch, 1, cfg_.embed_dim});
  Tensor<T> tokens = ops::concat<T>({cls, patches}, 1);
  if (cfg_.use_abs_pos_embed) tokens = ops::add(tokens, pos_embed_);
  return TokenBatch<T>{tokens};
}

template <typename T>
TokenBatch<T> Model<T>::block_forward(std::size_t index, const TokenBatch<T>& x, Mode mode,
                                      AttentionTrace<T>* trace) {
  if (index >= blocks_.size())
    throw ContractError("block index " + std::to_string(index) + " out of range [0, " +
                        std::to_string(blocks_.size()) + ")");
  BlockParams<T>& b = blocks_[index];
  const TokenBatch<T> attn =
      hi_mhsa_forward(b.attn, TokenBatch<T>{b.norm1(x.tokens)}, mode, &dropout_rng_, trace);
  const Tensor<T> mid = ops::add(x.tokens, attn.tokens);
  const TokenBatch<T> normed{b.norm2(mid)};
  const TokenBatch<T> ffn = b.use_daff ? daff_forward(b.daff, normed, mode)
                                       : ffn_forward(b.ffn, normed);
  return TokenBatch<T>{ops::add(mid, ffn.tokens)};
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, Mode mode, ForwardProbe<T>* probe) {
  TokenBatch<T> x = embed(images, mode);
  if (probe != nullptr) probe->attention.clear();
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    AttentionTrace<T> trace;
    const bool capture = probe != nullptr && probe->capture_attention;
    x = block_forward(i, x, mode, capture ? &trace : nullptr);
    if (capture) probe->attention.push_back(trace.probs);
  }
  const std::size_t batch = x.batch();
  const Tensor<T> cls =
      ops::reshape(ops::narrow(norm_(x.tokens), 1, 0, 1), {batch, cfg_.embed_dim});
  if (probe != nullptr) probe->class_token = cls;
  return head_(cls);
}

template FfnParams<float> ffn_init(ParamBuilder<float>, FfnVariant, std::size_t, std::size_t,
                                   std::size_t);
template FfnParams<double> ffn_init(ParamBuilder<double>, FfnVariant, std::size_t, std::size_t,
                                    std::size_t);
template TokenBatch<float> ffn_forward(const FfnParams<float>&, const TokenBatch<float>&);
template TokenBatch<double> ffn_forward(const FfnParams<double>&, const TokenBatch<double>&);
template class Model<float>;
template class Model<double>;

}  // namespace dhvt
