#include "dhvt/daff.hpp"

#include <cmath>

#include "dhvt/error.hpp"

namespace dhvt {

std::size_t patch_grid_side(std::size_t length) {
  if (length < 2)
    throw ContractError("token sequence of length " + std::to_string(length) +
                        " has no patch tokens after the class token");
  const std::size_t patches = length - 1;
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  while (side * side > patches) --side;
  while ((side + 1) * (side + 1) <= patches) ++side;
  if (side * side != patches)
    throw ShapeError(std::to_string(patches) + " patch tokens do not form a square grid");
  return side;
}

template <typename T>
DaffParams<T> daff_init(ParamBuilder<T> pb, std::size_t dim, std::size_t hidden,
                        std::size_t se_ratio, DaffOptions options) {
  if (se_ratio == 0 || dim % se_ratio != 0)
    throw ConfigError("squeeze-excitation ratio " + std::to_string(se_ratio) +
                      " does not divide dim " + std::to_string(dim));
  DaffParams<T> p;
  p.dim = dim;
  p.hidden = hidden;
  p.se_ratio = se_ratio;
  p.agg_on_all_tokens = options.agg_on_all_tokens;
  p.disable_dw_shortcut = options.disable_dw_shortcut;
  p.conv1 = Conv2d<T>::make(pb.scope("conv1"), dim, hidden, 1, Conv2dOptions{1, 0, 1});
  p.norm1 = ConvNorm<T>::make(pb.scope("norm1"), hidden, options.norm);
  p.conv2 = Conv2d<T>::make(pb.scope("conv2"), hidden, hidden, 3, Conv2dOptions{1, 1, hidden});
  p.norm2 = ConvNorm<T>::make(pb.scope("norm2"), hidden, options.norm);
  p.conv3 = Conv2d<T>::make(pb.scope("conv3"), hidden, dim, 1, Conv2dOptions{1, 0, 1});
  p.norm3 = ConvNorm<T>::make(pb.scope("norm3"), dim, options.norm);
  p.compress = Linear<T>::make(pb.scope("compress"), dim, dim / se_ratio);
  p.excitation = Linear<T>::make(pb.scope("excitation"), dim / se_ratio, dim);
  return p;
}

template <typename T>
TokenBatch<T> daff_forward(DaffParams<T>& p, const TokenBatch<T>& x, Mode mode,
                           DaffTrace<T>* trace) {
  if (x.tokens.rank() != 3 || x.dim() != p.dim)
    throw ShapeError("feed-forward expects tokens (B, N+1, " + std::to_string(p.dim) + "), got " +
                     shape_str(x.tokens.shape()));
  const std::size_t side = patch_grid_side(x.length());
  const std::size_t batch = x.batch();
  const std::size_t patches = side * side;

  const Tensor<T> cls = ops::narrow(x.tokens, 1, 0, 1);
  const Tensor<T> grid = tokens_to_map(ops::narrow(x.tokens, 1, 1, patches), side, side);

  Tensor<T> h = ops::gelu(p.norm1(p.conv1(grid), mode));
  const Tensor<T> local = ops::gelu(p.norm2(p.conv2(h), mode));
  h = p.disable_dw_shortcut ? local : ops::add(h, local);
  const Tensor<T> out_map = p.norm3(p.conv3(h), mode);

  // Squeeze over the grid, excite through the bottleneck MLP.
  const Tensor<T> pooled = ops::mean(ops::reshape(out_map, {batch, p.dim, patches}), 2);
  const Tensor<T> weight =
      ops::reshape(p.excitation(ops::gelu(p.compress(pooled))), {batch, 1, p.dim});
  if (trace != nullptr) trace->se_weight = weight;

  Tensor<T> tokens = map_to_tokens(out_map);
  if (p.agg_on_all_tokens) tokens = ops::mul(tokens, weight);
  return TokenBatch<T>{ops::concat<T>({ops::mul(cls, weight), tokens}, 1)};
}

template DaffParams<float> daff_init(ParamBuilder<float>, std::size_t, std::size_t, std::size_t,
                                     DaffOptions);
template DaffParams<double> daff_init(ParamBuilder<double>, std::size_t, std::size_t,
                                      std::size_t, DaffOptions);
template TokenBatch<float> daff_forward(DaffParams<float>&, const TokenBatch<float>&, Mode,
                                        DaffTrace<float>*);
template TokenBatch<double> daff_forward(DaffParams<double>&, const TokenBatch<double>&, Mode,
                                         DaffTrace<double>*);

}  // namespace dhvt
