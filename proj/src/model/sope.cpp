#include "dhvt/sope.hpp"

#include "dhvt/error.hpp"

namespace dhvt {

template <typename T>
AffineParams<T> AffineParams<T>::make(ParamBuilder<T> pb, std::size_t channels) {
  AffineParams p;
  p.alpha = pb.ones("alpha", {channels});
  p.beta = pb.zeros("beta", {channels});
  return p;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const AffineParams<T>& p) {
  if (x.rank() != 4 || x.dim(1) != p.alpha.numel() || p.beta.numel() != p.alpha.numel())
    throw ConfigError("affine over " + std::to_string(p.alpha.numel()) +
                      " channels applied to a map of shape " + shape_str(x.shape()));
  return ops::channel_affine(x, p.alpha, p.beta);
}

std::vector<std::size_t> sope_channel_widths(std::size_t image_channels, std::size_t patch_size,
                                             std::size_t embed_dim) {
  switch (patch_size) {
    case 16:
      if (embed_dim % 8 != 0)
        throw ConfigError("patch embedding with P=16 needs embed_dim divisible by 8, got " +
                          std::to_string(embed_dim));
      return {image_channels, embed_dim / 8, embed_dim / 4, embed_dim / 2, embed_dim};
    case 4:
      if (embed_dim % 2 != 0)
        throw ConfigError("patch embedding with P=4 needs embed_dim divisible by 2, got " +
                          std::to_string(embed_dim));
      return {image_channels, embed_dim / 2, embed_dim};
    case 2:
      return {image_channels, embed_dim};
    default:
      throw ConfigError("unsupported patch size " + std::to_string(patch_size) +
                        " for the convolutional patch embedding; supported: 2, 4, 16");
  }
}

bool sope_stage_has_gelu(std::size_t patch_size, std::size_t stage) {
  const std::size_t count = patch_size == 16 ? 4 : patch_size == 4 ? 2 : 1;
  return patch_size == 2 || stage + 1 < count;
}

template <typename T>
SopeParams<T> sope_init(ParamBuilder<T> pb, std::size_t image_channels, std::size_t patch_size,
                        std::size_t embed_dim, NormKind norm, bool use_affine) {
  const std::vector<std::size_t> widths =
      sope_channel_widths(image_channels, patch_size, embed_dim);
  SopeParams<T> p;
  p.patch_size = patch_size;
  p.embed_dim = embed_dim;
  p.use_affine = use_affine;
  if (use_affine) p.pre_affine = AffineParams<T>::make(pb.scope("pre_affine"), image_channels);
  for (std::size_t s = 0; s + 1 < widths.size(); ++s) {
    ParamBuilder<T> stage = pb.scope("stages." + std::to_string(s));
    SopeStage<T> st;
    st.conv = Conv2d<T>::make(stage.scope("conv"), widths[s], widths[s + 1], 3,
                              Conv2dOptions{2, 1, 1});
    st.norm = ConvNorm<T>::make(stage.scope("norm"), widths[s + 1], norm);
    st.gelu_after = sope_stage_has_gelu(patch_size, s);
    p.stages.push_back(std::move(st));
  }
  if (use_affine) p.post_affine = AffineParams<T>::make(pb.scope("post_affine"), embed_dim);
  return p;
}

template <typename T>
SopeParams<T> sope_init(std::size_t image_channels, std::size_t patch_size, std::size_t embed_dim,
                        std::uint64_t seed) {
  ParamStore<T> store;
  Rng rng(seed);
  return sope_init(ParamBuilder<T>(store, rng), image_channels, patch_size, embed_dim);
}

template <typename T>
TokenBatch<T> sope_forward(SopeParams<T>& p, const Tensor<T>& images, Mode mode) {
  if (images.rank() != 4)
    throw ShapeError("patch embedding expects images (B, C, H, W), got " +
                     shape_str(images.shape()));
  const std::size_t height = images.dim(2);
  const std::size_t width = images.dim(3);
  if (height % p.patch_size != 0 || width % p.patch_size != 0)
    throw ShapeError("image size H=" + std::to_string(height) + ", W=" + std::to_string(width) +
                     " is not divisible by patch size P=" + std::to_string(p.patch_size));
  Tensor<T> x = p.use_affine ? affine(images, p.pre_affine) : images;
  for (auto& stage : p.stages) {
    x = stage.norm(stage.conv(x), mode);
    if (stage.gelu_after) x = ops::gelu(x);
  }
  if (p.use_affine) x = affine(x, p.post_affine);
  return TokenBatch<T>{map_to_tokens(x)};
}

template struct AffineParams<float>;
template struct AffineParams<double>;
template Tensor<float> affine(const Tensor<float>&, const AffineParams<float>&);
template Tensor<double> affine(const Tensor<double>&, const AffineParams<double>&);
template SopeParams<float> sope_init(ParamBuilder<float>, std::size_t, std::size_t, std::size_t,
                                     NormKind, bool);
template SopeParams<double> sope_init(ParamBuilder<double>, std::size_t, std::size_t, std::size_t,
                                      NormKind, bool);
template SopeParams<float> sope_init<float>(std::size_t, std::size_t, std::size_t, std::uint64_t);
template SopeParams<double> sope_init<double>(std::size_t, std::size_t, std::size_t,
                                              std::uint64_t);
template TokenBatch<float> sope_forward(SopeParams<float>&, const Tensor<float>&, Mode);
template TokenBatch<double> sope_forward(SopeParams<double>&, const Tensor<double>&, Mode);

}  // namespace dhvt
