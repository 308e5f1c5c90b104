#include "dhvt/layers.hpp"

#include "dhvt/error.hpp"

namespace dhvt {

template <typename T>
Linear<T> Linear<T>::make(ParamBuilder<T> pb, std::size_t in, std::size_t out) {
  Linear layer;
  layer.weight = pb.trunc_normal("weight", {out, in});
  layer.bias = pb.zeros("bias", {out});
  return layer;
}

template <typename T>
Conv2d<T> Conv2d<T>::make(ParamBuilder<T> pb, std::size_t in, std::size_t out,
                          std::size_t kernel, Conv2dOptions options) {
  if (options.groups == 0 || in % options.groups != 0 || out % options.groups != 0)
    throw ConfigError("conv: channels " + std::to_string(in) + " -> " + std::to_string(out) +
                      " not divisible by groups " + std::to_string(options.groups));
  Conv2d layer;
  layer.weight = pb.trunc_normal("weight", {out, in / options.groups, kernel, kernel});
  layer.bias = pb.zeros("bias", {out});
  layer.options = options;
  return layer;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(ParamBuilder<T> pb, std::size_t dim) {
  LayerNorm layer;
  layer.gamma = pb.ones("weight", {dim});
  layer.beta = pb.zeros("bias", {dim});
  return layer;
}

template <typename T>
ConvNorm<T> ConvNorm<T>::make(ParamBuilder<T> pb, std::size_t channels, NormKind kind) {
  ConvNorm norm;
  norm.kind = kind;
  if (kind == NormKind::kBatch) {
    norm.bn.gamma = pb.ones("weight", {channels});
    norm.bn.beta = pb.zeros("bias", {channels});
    norm.bn.running_mean = pb.buffer("running_mean", {channels}, T(0));
    norm.bn.running_var = pb.buffer("running_var", {channels}, T(1));
  } else {
    norm.ln = LayerNorm<T>::make(pb, channels);
  }
  return norm;
}

template <typename T>
Tensor<T> ConvNorm<T>::operator()(const Tensor<T>& x, Mode mode) {
  if (kind == NormKind::kBatch) return ops::batchnorm2d(x, bn, mode);
  const Tensor<T> channels_last = ops::permute(x, {0, 2, 3, 1});
  return ops::permute(ln(channels_last), {0, 3, 1, 2});
}

template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
  const std::size_t b = map.dim(0);
  const std::size_t c = map.dim(1);
  const std::size_t n = map.dim(2) * map.dim(3);
  return ops::permute(ops::reshape(map, {b, c, n}), {0, 2, 1});
}

template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t height, std::size_t width) {
  const std::size_t b = tokens.dim(0);
  const std::size_t c = tokens.dim(2);
  if (tokens.dim(1) != height * width)
    throw ShapeError("tokens_to_map: " + std::to_string(tokens.dim(1)) + " tokens for a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  return ops::reshape(ops::permute(tokens, {0, 2, 1}), {b, c, height, width});
}

template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct ConvNorm<float>;
template struct ConvNorm<double>;
template Tensor<float> map_to_tokens(const Tensor<float>&);
template Tensor<double> map_to_tokens(const Tensor<double>&);
template Tensor<float> tokens_to_map(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> tokens_to_map(const Tensor<double>&, std::size_t, std::size_t);

}  // namespace dhvt
