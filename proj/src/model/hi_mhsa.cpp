#include "dhvt/hi_mhsa.hpp"

#include <cmath>

#include "dhvt/error.hpp"

namespace dhvt {

template <typename T>
T HiMhsaParams<T>::scale() const {
  return T(1) / std::sqrt(static_cast<T>(head_dim()));
}

template <typename T>
HiMhsaParams<T> hi_mhsa_init(ParamBuilder<T> pb, std::size_t dim, std::size_t heads,
                             bool use_head_token, double attn_dropout) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  HiMhsaParams<T> p;
  p.dim = dim;
  p.heads = heads;
  p.use_head_token = use_head_token;
  p.attn_dropout = attn_dropout;
  p.qkv = Linear<T>::make(pb.scope("qkv"), dim, 3 * dim);
  p.proj = Linear<T>::make(pb.scope("proj"), dim, dim);
  if (use_head_token) {
    p.ht_proj = Linear<T>::make(pb.scope("ht_proj"), dim / heads, dim);
    p.ht_norm = LayerNorm<T>::make(pb.scope("ht_norm"), dim / heads);
    p.head_embed = pb.zeros("head_embed", {heads, dim});
  }
  return p;
}

template <typename T>
Tensor<T> make_head_tokens(const HiMhsaParams<T>& p, const TokenBatch<T>& x) {
  if (p.heads == 0 || p.dim % p.heads != 0)
    throw ConfigError("attention dim " + std::to_string(p.dim) + " is not divisible by " +
                      std::to_string(p.heads) + " heads");
  if (!p.ht_proj.weight.defined())
    throw ContractError("head tokens requested from parameters built without them");
  const std::size_t batch = x.batch();
  const std::size_t h = p.heads;
  const std::size_t d = p.head_dim();
  // Average every channel group over all tokens: [B, S, h, d] -> [B, h, d].
  const Tensor<T> groups = ops::mean(ops::reshape(x.tokens, {batch, x.length(), h, d}), 1);
  const Tensor<T> projected = ops::reshape(p.ht_proj(groups), {batch, h, h, d});
  const Tensor<T> activated = ops::reshape(ops::gelu(p.ht_norm(projected)), {batch, h, p.dim});
  return ops::add(activated, p.head_embed);
}

template <typename T>
TokenBatch<T> hi_mhsa_forward(const HiMhsaParams<T>& p, const TokenBatch<T>& x, Mode mode,
                              Rng* dropout_rng, AttentionTrace<T>* trace) {
  if (x.tokens.rank() != 3 || x.dim() != p.dim)
    throw ShapeError("attention expects tokens (B, N+1, " + std::to_string(p.dim) + "), got " +
                     shape_str(x.tokens.shape()));
  const std::size_t batch = x.batch();
  const std::size_t base_len = x.length();
  const std::size_t h = p.heads;
  const std::size_t d = p.head_dim();

  Tensor<T> seq = x.tokens;
  if (p.use_head_token) seq = ops::concat<T>({x.tokens, make_head_tokens(p, x)}, 1);
  const std::size_t len = seq.dim(1);

  // [B, S, 3D] -> [3, B, h, S, d]
  const Tensor<T> qkv =
      ops::permute(ops::reshape(p.qkv(seq), {batch, len, 3, h, d}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) {
    return ops::reshape(ops::narrow(qkv, 0, i, 1), {batch, h, len, d});
  };
  const Tensor<T> q = part(0);
  const Tensor<T> k = part(1);
  const Tensor<T> v = part(2);

  Tensor<T> attn = ops::softmax(ops::scale(ops::matmul(q, ops::transpose_last(k)), p.scale()));
  if (trace != nullptr) trace->probs = attn;
  if (mode == Mode::kTrain) attn = ops::dropout(attn, p.attn_dropout, dropout_rng);

  const Tensor<T> mixed =
      ops::reshape(ops::permute(ops::matmul(attn, v), {0, 2, 1, 3}), {batch, len, p.dim});
  const Tensor<T> out = p.proj(mixed);
  if (!p.use_head_token) return TokenBatch<T>{out};

  const Tensor<T> cls = ops::narrow(out, 1, 0, 1);
  const Tensor<T> patches = ops::narrow(out, 1, 1, base_len - 1);
  const Tensor<T> heads = ops::narrow(out, 1, base_len, h);
  const Tensor<T> merged_cls = ops::add(cls, ops::mean(heads, 1, true));
  return TokenBatch<T>{ops::concat<T>({merged_cls, patches}, 1)};
}

template struct HiMhsaParams<float>;
template struct HiMhsaParams<double>;
template HiMhsaParams<float> hi_mhsa_init(ParamBuilder<float>, std::size_t, std::size_t, bool,
                                          double);
template HiMhsaParams<double> hi_mhsa_init(ParamBuilder<double>, std::size_t, std::size_t, bool,
                                           double);
template Tensor<float> make_head_tokens(const HiMhsaParams<float>&, const TokenBatch<float>&);
template Tensor<double> make_head_tokens(const HiMhsaParams<double>&, const TokenBatch<double>&);
template TokenBatch<float> hi_mhsa_forward(const HiMhsaParams<float>&, const TokenBatch<float>&,
                                           Mode, Rng*, AttentionTrace<float>*);
template TokenBatch<double> hi_mhsa_forward(const HiMhsaParams<double>&,
                                            const TokenBatch<double>&, Mode, Rng*,
                                            AttentionTrace<double>*);

}  // namespace dhvt
