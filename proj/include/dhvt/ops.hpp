#pragma once

// Differentiable primitives. Each op computes its forward result eagerly and,
// when a Tape is open on the current thread and an input requires grad,
// records its vector-Jacobian product on that tape.

#include <cstddef>
#include <optional>
#include <vector>

#include "dhvt/random.hpp"
#include "dhvt/tensor.hpp"

namespace dhvt {

enum class Mode { kTrain, kEval };

// Per-channel BatchNorm parameters and running statistics. gamma and beta are
// trainable; running_mean and running_var are buffers updated in train mode.
template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BatchNormState make(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
};

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

namespace ops {

// [.., m, k] x [.., k, n]. b may also be rank 2 and shared by every batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[.., in] * weight[out, in]^T + bias[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Elementwise with NumPy broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim = false);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

// Swaps the last two axes.
template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x);

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

// Exact form 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// Normalizes over the last axis.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-6));

// x[B, C, H, W]. Train mode uses biased batch statistics over (B, H, W) and
// folds them into the running statistics (unbiased variance); eval mode uses
// the running statistics. Throws ContractError in train mode when B*H*W < 2.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& state, Mode mode);

// Cross-correlation with zero padding. weight is [Cout, Cin/groups, kh, kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& options);

// x[B, C, H, W] * alpha[C] + beta[C]
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& alpha, const Tensor<T>& beta);

// Mean of -log softmax(logits)[label] over the batch. logits is [B, K].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// Inverted dropout; identity when p == 0 or rng is null.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng);

}  // namespace ops
}  // namespace dhvt
