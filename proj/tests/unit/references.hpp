#pragma once

// Brute-force references for the model components, composed from the
// loop-level primitives in oracle.hpp. f64 only.

#include <cmath>

#include "dhvt/daff.hpp"
#include "dhvt/hi_mhsa.hpp"
#include "dhvt/sope.hpp"
#include "oracle.hpp"

namespace reference {

using namespace dhvt;
using TD = Tensor<double>;

// Stage-by-stage reference: affine, [conv, BN, GELU?]*, affine, flatten.
inline oracle::Vec sope(const SopeParams<double>& p, const TD& images, bool train) {
  oracle::Map x{images.dim(0), images.dim(1), images.dim(2), images.dim(3), oracle::vec(images)};
  auto aff = [](oracle::Map m, const AffineParams<double>& a) {
    for (std::size_t n = 0; n < m.b; ++n)
      for (std::size_t c = 0; c < m.c; ++c)
        for (std::size_t i = 0; i < m.h; ++i)
          for (std::size_t j = 0; j < m.w; ++j)
            m.at(n, c, i, j) = a.alpha.values()[c] * m.at(n, c, i, j) + a.beta.values()[c];
    return m;
  };
  if (p.use_affine) x = aff(x, p.pre_affine);
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const auto& st = p.stages[s];
    x = oracle::conv2d(x, oracle::vec(st.conv.weight), oracle::vec(st.conv.bias),
                       st.conv.weight.dim(0), 3, 2, 1, 1);
    x = oracle::batchnorm(x, oracle::vec(st.norm.bn.gamma), oracle::vec(st.norm.bn.beta),
                          oracle::vec(st.norm.bn.running_mean), oracle::vec(st.norm.bn.running_var),
                          train);
    if (sope_stage_has_gelu(p.patch_size, s)) x.v = oracle::map_gelu(x.v);
  }
  if (p.use_affine) x = aff(x, p.post_affine);
  oracle::Vec tokens(x.v.size());
  for (std::size_t n = 0; n < x.b; ++n)
    for (std::size_t i = 0; i < x.h; ++i)
      for (std::size_t j = 0; j < x.w; ++j)
        for (std::size_t c = 0; c < x.c; ++c)
          tokens[((n * x.h + i) * x.w + j) * x.c + c] = x.at(n, c, i, j);
  return tokens;
}

inline oracle::Map conv_norm(const oracle::Map& x, const ConvNorm<double>& n, bool train) {
  if (n.kind == NormKind::kBatch)
    return oracle::batchnorm(x, oracle::vec(n.bn.gamma), oracle::vec(n.bn.beta),
                             oracle::vec(n.bn.running_mean), oracle::vec(n.bn.running_var), train);
  oracle::Map y = x;
  oracle::Vec col(x.c);
  for (std::size_t b = 0; b < x.b; ++b)
    for (std::size_t i = 0; i < x.h; ++i)
      for (std::size_t j = 0; j < x.w; ++j) {
        for (std::size_t c = 0; c < x.c; ++c) col[c] = x.at(b, c, i, j);
        const auto out = oracle::layernorm(col, 1, x.c, oracle::vec(n.ln.gamma), oracle::vec(n.ln.beta));
        for (std::size_t c = 0; c < x.c; ++c) y.at(b, c, i, j) = out[c];
      }
  return y;
}

// Full reference of the feed-forward on x[B, 1+s*s, D]; returns [B, 1+s*s, D].
inline oracle::Vec daff(const DaffParams<double>& p, const TD& x, bool train,
                       oracle::Vec* se_out = nullptr) {
  const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2), H = p.hidden;
  const std::size_t s = static_cast<std::size_t>(std::lround(std::sqrt(double(L - 1))));
  oracle::Map grid{B, D, s, s, oracle::Vec(B * D * s * s)};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < s * s; ++t)
      for (std::size_t c = 0; c < D; ++c) grid.at(b, c, t / s, t % s) = x.at({b, t + 1, c});

  auto conv = [](const oracle::Map& m, const Conv2d<double>& cv, std::size_t cout, std::size_t k,
                 std::size_t pad, std::size_t groups) {
    return oracle::conv2d(m, oracle::vec(cv.weight), oracle::vec(cv.bias), cout, k, 1, pad, groups);
  };
  oracle::Map h = conv_norm(conv(grid, p.conv1, H, 1, 0, 1), p.norm1, train);
  h.v = oracle::map_gelu(h.v);
  oracle::Map local = conv_norm(conv(h, p.conv2, H, 3, 1, H), p.norm2, train);
  local.v = oracle::map_gelu(local.v);
  if (!p.disable_dw_shortcut)
    for (std::size_t i = 0; i < h.v.size(); ++i) local.v[i] += h.v[i];
  const oracle::Map out = conv_norm(conv(local, p.conv3, D, 1, 0, 1), p.norm3, train);

  oracle::Vec pooled(B * D, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < D; ++c) {
      for (std::size_t t = 0; t < s * s; ++t) pooled[b * D + c] += out.at(b, c, t / s, t % s);
      pooled[b * D + c] /= double(s * s);
    }
  const std::size_t R = D / p.se_ratio;
  oracle::Vec mid = oracle::map_gelu(
      oracle::linear(pooled, B, D, oracle::vec(p.compress.weight), oracle::vec(p.compress.bias), R));
  const oracle::Vec w =
      oracle::linear(mid, B, R, oracle::vec(p.excitation.weight), oracle::vec(p.excitation.bias), D);
  if (se_out) *se_out = w;

  oracle::Vec y(B * L * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < D; ++c) {
      y[(b * L) * D + c] = x.at({b, 0, c}) * w[b * D + c];
      for (std::size_t t = 0; t < s * s; ++t) {
        double v = out.at(b, c, t / s, t % s);
        if (p.agg_on_all_tokens) v *= w[b * D + c];
        y[(b * L + t + 1) * D + c] = v;
      }
    }
  return y;
}

// Head tokens of one sequence x[S, D], built from scratch.
inline oracle::Vec head_tokens(const HiMhsaParams<double>& p, const oracle::Vec& x,
                               std::size_t s) {
  const std::size_t D = p.dim, h = p.heads, d = D / h;
  oracle::Vec groups(h * d, 0.0);
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t c = 0; c < D; ++c) groups[c] += x[t * D + c];
  for (auto& g : groups) g /= double(s);
  const oracle::Vec proj =
      oracle::linear(groups, h, d, oracle::vec(p.ht_proj.weight), oracle::vec(p.ht_proj.bias), D);
  oracle::Vec out = oracle::map_gelu(
      oracle::layernorm(proj, h * h, d, oracle::vec(p.ht_norm.gamma), oracle::vec(p.ht_norm.beta)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p.head_embed.values()[i];
  return out;
}

// Full module on one sequence x[S, D]; optionally returns the probabilities.
inline oracle::Vec hi_mhsa(const HiMhsaParams<double>& p, const oracle::Vec& x, std::size_t s,
                           oracle::Vec* probs = nullptr) {
  const std::size_t D = p.dim, h = p.heads;
  oracle::Vec seq = x;
  std::size_t len = s;
  if (p.use_head_token) {
    const auto ht = head_tokens(p, x, s);
    seq.insert(seq.end(), ht.begin(), ht.end());
    len += h;
  }
  const auto mixed = oracle::attention(seq, len, D, h, oracle::vec(p.qkv.weight),
                                       oracle::vec(p.qkv.bias), probs);
  const auto out = oracle::linear(mixed, len, D, oracle::vec(p.proj.weight), oracle::vec(p.proj.bias), D);
  oracle::Vec y(out.begin(), out.begin() + s * D);
  if (p.use_head_token)
    for (std::size_t c = 0; c < D; ++c) {
      double m = 0.0;
      for (std::size_t j = 0; j < h; ++j) m += out[(s + j) * D + c];
      y[c] += m / double(h);
    }
  return y;
}

}  // namespace reference
