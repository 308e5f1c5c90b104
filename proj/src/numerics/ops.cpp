#include "dhvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dhvt/error.hpp"
#include "dhvt/kernels.hpp"

namespace dhvt {

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::size_t channels) {
  BatchNormState state;
  state.gamma = Tensor<T>::full({channels}, T(1));
  state.beta = Tensor<T>({channels});
  state.running_mean = Tensor<T>({channels});
  state.running_var = Tensor<T>::full({channels}, T(1));
  return state;
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;

namespace ops {
namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::current();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  return nullptr;
}

template <typename T>
bool wants_grad(const ImplPtr<T>& p) {
  return p != nullptr && p->requires_grad;
}

template <typename T>
void finish(Tensor<T>& out, Tape<T>* tape, const char* op) {
  if (tape != nullptr) out.set_requires_grad(true);
  if (finite_checks_enabled()) {
    for (T v : out.values())
      if (!std::isfinite(v))
        throw NumericError(std::string("non-finite value produced by op '") + op +
                           "' with output shape " + shape_str(out.shape()));
  }
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined()) throw ContractError(std::string(op) + ": " + what + " is undefined");
}

// Element offsets of `in` for every flat index of a broadcast result `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t shift = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t running = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    stride[i + shift] = in[i] == 1 ? 0 : running;
    running *= in[i];
  }
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> index(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    offsets[flat] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++index[axis];
      offset += stride[axis];
      if (index[axis] < out[axis]) break;
      offset -= stride[axis] * index[axis];
      index[axis] = 0;
    }
  }
  return offsets;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* op) {
  require_defined(a, op, "lhs");
  require_defined(b, op, "rhs");
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  Tensor<T> out(out_shape);
  const std::size_t n = out.numel();
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> ao;
  std::vector<std::size_t> bo;
  if (!same) {
    ao = broadcast_offsets(a.shape(), out_shape);
    bo = broadcast_offsets(b.shape(), out_shape);
  }
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = pa[same ? i : ao[i]];
    const T y = pb[same ? i : bo[i]];
    po[i] = kind == BinaryKind::kAdd ? x + y : kind == BinaryKind::kSub ? x - y : x * y;
  }
  Tape<T>* tape = recording_tape({&a, &b});
  finish(out, tape, op);
  if (tape != nullptr) {
    tape->record(op, [ai = a.impl(), bi = b.impl(), oi = out.impl(), kind, same,
                      ao = std::move(ao), bo = std::move(bo)] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      const std::size_t n = oi->values.size();
      if (wants_grad(ai)) {
        T* ga = ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const T factor = kind == BinaryKind::kMul ? bi->values[same ? i : bo[i]] : T(1);
          ga[same ? i : ao[i]] += g[i] * factor;
        }
      }
      if (wants_grad(bi)) {
        T* gb = bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const T factor = kind == BinaryKind::kMul   ? ai->values[same ? i : ao[i]]
                           : kind == BinaryKind::kSub ? T(-1)
                                                      : T(1);
          gb[same ? i : bo[i]] += g[i] * factor;
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul", "lhs");
  require_defined(b, "matmul", "rhs");
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) throw mismatch();
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank()) throw mismatch();
    for (std::size_t i = 0; i + 2 < a.rank(); ++i)
      if (a.dim(i) != b.dim(i)) throw mismatch();
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  T* po = out.mutable_values().data();
  if (shared_b) {
    kernels::gemm(false, false, batch * m, n, k, a.data(), b.data(), po);
  } else {
    for (std::size_t s = 0; s < batch; ++s)
      kernels::gemm(false, false, m, n, k, a.data() + s * m * k, b.data() + s * k * n,
                    po + s * m * n);
  }
  Tape<T>* tape = recording_tape({&a, &b});
  finish(out, tape, "matmul");
  if (tape != nullptr) {
    tape->record("matmul", [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, n, k, batch,
                            shared_b] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (shared_b) {
        if (wants_grad(ai))
          kernels::gemm(false, true, batch * m, k, n, g, bi->values.data(), ai->ensure_grad());
        if (wants_grad(bi))
          kernels::gemm(true, false, k, n, batch * m, ai->values.data(), g, bi->ensure_grad());
        return;
      }
      for (std::size_t s = 0; s < batch; ++s) {
        if (wants_grad(ai))
          kernels::gemm(false, true, m, k, n, g + s * m * n, bi->values.data() + s * k * n,
                        ai->ensure_grad() + s * m * k);
        if (wants_grad(bi))
          kernels::gemm(true, false, k, n, m, ai->values.data() + s * m * k, g + s * m * n,
                        bi->ensure_grad() + s * k * n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_defined(x, "linear", "input");
  require_defined(weight, "linear", "weight");
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(x.rank() - 1) != weight.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  const std::size_t in = weight.dim(1);
  const std::size_t out_features = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features))
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  Tensor<T> out(out_shape);
  T* po = out.mutable_values().data();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias.data(), bias.data() + out_features, po + r * out_features);
  }
  kernels::gemm(false, true, rows, out_features, in, x.data(), weight.data(), po);
  Tape<T>* tape = recording_tape({&x, &weight, &bias});
  finish(out, tape, "linear");
  if (tape != nullptr) {
    tape->record("linear", [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(),
                            rows, in, out_features] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (wants_grad(xi))
        kernels::gemm(false, false, rows, in, out_features, g, wi->values.data(),
                      xi->ensure_grad());
      if (wants_grad(wi))
        kernels::gemm(true, false, out_features, in, rows, g, xi->values.data(),
                      wi->ensure_grad());
      if (wants_grad(bi)) {
        T* gb = bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out_features; ++o) gb[o] += g[r * out_features + o];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  require_defined(x, "scale", "input");
  Tensor<T> out(x.shape());
  auto dst = out.mutable_values();
  auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] * factor;
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "scale");
  if (tape != nullptr) {
    tape->record("scale", [xi = x.impl(), oi = out.impl(), factor] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum", "input");
  T acc = 0;
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "sum");
  if (tape != nullptr) {
    tape->record("sum", [xi = x.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < xi->values.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  require_defined(x, "mean", "input");
  if (axis >= x.rank())
    throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  const std::size_t len = x.dim(axis);
  if (len == 0) throw ShapeError("mean: empty reduction axis");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(out_shape);
  T* po = out.mutable_values().data();
  const T* px = x.data();
  const T inv = T(1) / static_cast<T>(len);
  // Shifted by the first element: exact for constant inputs.
  for (std::size_t o = 0; o < outer; ++o) {
    const T* first = px + o * len * inner;
    T* dst = po + o * inner;
    for (std::size_t l = 1; l < len; ++l) {
      const T* row = first + l * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i] - first[i];
    }
    for (std::size_t i = 0; i < inner; ++i) dst[i] = first[i] + dst[i] * inv;
  }
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "mean");
  if (tape != nullptr) {
    tape->record("mean", [xi = x.impl(), oi = out.impl(), outer, len, inner, inv] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      const T* g = oi->grad.data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < inner; ++i)
            gx[(o * len + l) * inner + i] += g[o * inner + i] * inv;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape", "input");
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "reshape");
  if (tape != nullptr) {
    tape->record("reshape", [xi = x.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  require_defined(x, "permute", "input");
  const std::size_t rank = x.rank();
  if (perm.size() != rank)
    throw ShapeError("permute: permutation of length " + std::to_string(perm.size()) +
                     " for shape " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(perm[i]);
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = x.numel();
  std::vector<std::size_t> source(total);
  std::vector<std::size_t> index(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    source[flat] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++index[axis];
      offset += stride[axis];
      if (index[axis] < out_shape[axis]) break;
      offset -= stride[axis] * index[axis];
      index[axis] = 0;
    }
  }
  Tensor<T> out(out_shape);
  T* po = out.mutable_values().data();
  const T* px = x.data();
  for (std::size_t i = 0; i < total; ++i) po[i] = px[source[i]];
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "permute");
  if (tape != nullptr) {
    tape->record("permute", [xi = x.impl(), oi = out.impl(), source = std::move(source)] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t i = 0; i < source.size(); ++i) gx[source[i]] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last: rank < 2");
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "narrow", "input");
  if (axis >= x.rank() || start + length > x.dim(axis))
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " of " + shape_str(x.shape()));
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  T* po = out.mutable_values().data();
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.data() + (o * len + start) * inner;
    std::copy(src, src + length * inner, po + o * length * inner);
  }
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "narrow");
  if (tape != nullptr) {
    tape->record("narrow", [xi = x.impl(), oi = out.impl(), outer, inner, len, start, length] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = oi->grad.data() + o * length * inner;
        T* dst = gx + (o * len + start) * inner;
        for (std::size_t i = 0; i < length * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Tensor<T>& first = parts.front();
  require_defined(first, "concat", "input");
  if (axis >= first.rank()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat", "input");
    bool ok = p.rank() == first.rank();
    for (std::size_t i = 0; ok && i < p.rank(); ++i)
      if (i != axis && p.dim(i) != first.dim(i)) ok = false;
    if (!ok)
      throw ShapeError("concat: " + shape_str(p.shape()) + " does not match " +
                       shape_str(first.shape()) + " off axis " + std::to_string(axis));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first.dim(i);
  for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);
  const std::size_t total_len = out_shape[axis];
  Tensor<T> out(out_shape);
  T* po = out.mutable_values().data();
  std::vector<std::size_t> starts;
  std::size_t cursor = 0;
  for (const auto& p : parts) {
    starts.push_back(cursor);
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = p.data() + o * len * inner;
      std::copy(src, src + len * inner, po + (o * total_len + cursor) * inner);
    }
    cursor += len;
  }
  Tape<T>* tape = Tape<T>::current();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) tape = nullptr;
  finish(out, tape, "concat");
  if (tape != nullptr) {
    std::vector<ImplPtr<T>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    tape->record("concat", [impls = std::move(impls), starts = std::move(starts), oi = out.impl(),
                            outer, inner, total_len, axis] {
      if (oi->grad.empty()) return;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (!wants_grad(impls[k])) continue;
        const std::size_t len = impls[k]->shape[axis];
        T* gp = impls[k]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* g = oi->grad.data() + (o * total_len + starts[k]) * inner;
          T* dst = gp + o * len * inner;
          for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  require_defined(x, "broadcast_to", "input");
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape)
    throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  std::vector<std::size_t> offsets = broadcast_offsets(x.shape(), shape);
  Tensor<T> out(shape);
  T* po = out.mutable_values().data();
  for (std::size_t i = 0; i < offsets.size(); ++i) po[i] = x.data()[offsets[i]];
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "broadcast_to");
  if (tape != nullptr) {
    tape->record("broadcast_to", [xi = x.impl(), oi = out.impl(), offsets = std::move(offsets)] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t i = 0; i < offsets.size(); ++i) gx[offsets[i]] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x, "gelu", "input");
  Tensor<T> out(x.shape());
  auto dst = out.mutable_values();
  auto src = x.values();
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = T(0.5) * src[i] * (T(1) + std::erf(src[i] * inv_sqrt2));
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "gelu");
  if (tape != nullptr) {
    tape->record("gelu", [xi = x.impl(), oi = out.impl(), inv_sqrt2] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
      for (std::size_t i = 0; i < xi->values.size(); ++i) {
        const T v = xi->values[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += oi->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require_defined(x, "softmax", "input");
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  Tensor<T> out(x.shape());
  T* po = out.mutable_values().data();
  const T* px = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = px + r * n;
    T* dst = po + r * n;
    const T peak = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(in[j] - peak);
      total += dst[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  Tape<T>* tape = recording_tape({&x});
  finish(out, tape, "softmax");
  if (tape != nullptr) {
    tape->record("softmax", [xi = x.impl(), oi = out.impl(), rows, n] {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      const auto& kt = kernels::active<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = oi->values.data() + r * n;
        const T* g = oi->grad.data() + r * n;
        const T inner = kt.dot(n, y, g);
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - inner);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_defined(x, "layernorm", "input");
  if (x.rank() == 0 || x.dim(x.rank() - 1) == 0)
    throw ShapeError("layernorm: needs a non-empty last axis, got " + shape_str(x.shape()));
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layernorm: gamma/beta of size " + std::to_string(gamma.numel()) + "/" +
                     std::to_string(beta.numel()) + " for last axis " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> mean_of(rows);
  std::vector<T> rstd(rows);
  T* po = out.mutable_values().data();
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = px + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    mean_of[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) po[r * d + j] = (in[j] - mu) * rs * pg[j] + pb[j];
  }
  Tape<T>* tape = recording_tape({&x, &gamma, &beta});
  finish(out, tape, "layernorm");
  if (tape != nullptr) {
    tape->record("layernorm", [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
                               mean_of = std::move(mean_of), rstd = std::move(rstd), rows, d] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      std::vector<T> xhat(d);
      std::vector<T> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xi->values.data() + r * d;
        const T* gr = g + r * d;
        T mean_dxhat = 0;
        T mean_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (in[j] - mean_of[r]) * rstd[r];
          dxhat[j] = gr[j] * gi->values[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xhat[j];
        }
        mean_dxhat /= static_cast<T>(d);
        mean_dxhat_xhat /= static_cast<T>(d);
        if (wants_grad(xi)) {
          T* gx = xi->ensure_grad() + r * d;
          for (std::size_t j = 0; j < d; ++j)
            gx[j] += rstd[r] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
        if (wants_grad(gi)) {
          T* gg = gi->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xhat[j];
        }
        if (wants_grad(bi)) {
          T* gb = bi->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
  require_defined(x, "batchnorm2d", "input");
  if (x.rank() != 4) throw ShapeError("batchnorm2d: expects (B, C, H, W), got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  if (state.channels() != channels)
    throw ShapeError("batchnorm2d: state has " + std::to_string(state.channels()) +
                     " channels, input has " + std::to_string(channels));
  const std::size_t count = batch * plane;
  if (mode == Mode::kTrain && count < 2)
    throw ContractError("batchnorm2d: degenerate batch, train mode needs B*H*W >= 2 (got " +
                        std::to_string(count) + ")");
  std::vector<T> mean_of(channels);
  std::vector<T> rstd(channels);
  const T* px = x.data();
  if (mode == Mode::kTrain) {
    auto rm = state.running_mean.mutable_values();
    auto rv = state.running_var.mutable_values();
    for (std::size_t c = 0; c < channels; ++c) {
      T mu = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* in = px + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mu += in[i];
      }
      mu /= static_cast<T>(count);
      T var = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* in = px + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (in[i] - mu) * (in[i] - mu);
      }
      const T biased = var / static_cast<T>(count);
      const T unbiased = var / static_cast<T>(count - 1);
      mean_of[c] = mu;
      rstd[c] = T(1) / std::sqrt(biased + state.eps);
      rm[c] = (T(1) - state.momentum) * rm[c] + state.momentum * mu;
      rv[c] = (T(1) - state.momentum) * rv[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean_of[c] = state.running_mean.values()[c];
      rstd[c] = T(1) / std::sqrt(state.running_var.values()[c] + state.eps);
    }
  }
  Tensor<T> out(x.shape());
  T* po = out.mutable_values().data();
  const T* pg = state.gamma.data();
  const T* pb = state.beta.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      const T k = rstd[c] * pg[c];
      for (std::size_t i = 0; i < plane; ++i) po[base + i] = (px[base + i] - mean_of[c]) * k + pb[c];
    }
  Tape<T>* tape = recording_tape({&x, &state.gamma, &state.beta});
  finish(out, tape, "batchnorm2d");
  if (tape != nullptr) {
    tape->record("batchnorm2d", [xi = x.impl(), gi = state.gamma.impl(), bi = state.beta.impl(),
                                 oi = out.impl(), mean_of = std::move(mean_of),
                                 rstd = std::move(rstd), batch, channels, plane, count,
                                 train = mode == Mode::kTrain] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      const T* px = xi->values.data();
      for (std::size_t c = 0; c < channels; ++c) {
        T sum_g = 0;
        T sum_g_xhat = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const T xhat = (px[base + i] - mean_of[c]) * rstd[c];
            sum_g += g[base + i];
            sum_g_xhat += g[base + i] * xhat;
          }
        }
        if (wants_grad(gi)) gi->ensure_grad()[c] += sum_g_xhat;
        if (wants_grad(bi)) bi->ensure_grad()[c] += sum_g;
        if (!wants_grad(xi)) continue;
        T* gx = xi->ensure_grad();
        const T gamma = gi->values[c];
        const T inv_count = T(1) / static_cast<T>(count);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (train) {
              const T xhat = (px[base + i] - mean_of[c]) * rstd[c];
              gx[base + i] += gamma * rstd[c] *
                              (g[base + i] - sum_g * inv_count - xhat * sum_g_xhat * inv_count);
            } else {
              gx[base + i] += gamma * rstd[c] * g[base + i];
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t out_h, out_w;
  std::size_t stride, padding, groups;
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  std::size_t patch() const { return in_per_group() * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
  bool depthwise() const { return groups == in_channels && groups == out_channels; }
};

// col[(c * kh + i) * kw + j][oy * out_w + ox] = x[c][oy * s - p + i][ox * s - p + j]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.in_per_group(); ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* dst = col + ((c * g.kh + i) * g.kw + j) * g.out_plane();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = y >= 0 && xx >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                xx < static_cast<std::ptrdiff_t>(g.width);
            dst[oy * g.out_w + ox] =
                inside ? x[(c * g.height + static_cast<std::size_t>(y)) * g.width +
                           static_cast<std::size_t>(xx)]
                       : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  for (std::size_t c = 0; c < g.in_per_group(); ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* src = col + ((c * g.kh + i) * g.kw + j) * g.out_plane();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dx[(c * g.height + static_cast<std::size_t>(y)) * g.width +
               static_cast<std::size_t>(xx)] += src[oy * g.out_w + ox];
          }
        }
      }
}

// Visits every (output position, input position, kernel tap) triple of one
// depth-wise channel.
template <typename F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  for (std::size_t oy = 0; oy < g.out_h; ++oy)
    for (std::size_t ox = 0; ox < g.out_w; ++ox)
      for (std::size_t i = 0; i < g.kh; ++i) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                 static_cast<std::ptrdiff_t>(g.padding);
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
        for (std::size_t j = 0; j < g.kw; ++j) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.width)) continue;
          f(oy * g.out_w + ox, static_cast<std::size_t>(y) * g.width + static_cast<std::size_t>(xx),
            i * g.kw + j);
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& options) {
  require_defined(x, "conv2d", "input");
  require_defined(weight, "conv2d", "weight");
  if (x.rank() != 4 || weight.rank() != 4)
    throw ShapeError("conv2d: expects input (B, C, H, W) and weight (Cout, Cin/groups, kh, kw), got " +
                     shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  if (options.groups == 0 || options.stride == 0)
    throw ConfigError("conv2d: groups and stride must be positive");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  g.padding = options.padding;
  g.groups = options.groups;
  if (g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0)
    throw ConfigError("conv2d: channels " + std::to_string(g.in_channels) + " -> " +
                      std::to_string(g.out_channels) + " not divisible by groups " +
                      std::to_string(g.groups));
  if (weight.dim(1) != g.in_per_group())
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1) * g.groups) + " input channels, got " +
                     std::to_string(g.in_channels));
  if (bias.defined() && bias.numel() != g.out_channels)
    throw ShapeError("conv2d: bias size " + std::to_string(bias.numel()) + " for " +
                     std::to_string(g.out_channels) + " output channels");
  if (g.height + 2 * g.padding < g.kh || g.width + 2 * g.padding < g.kw)
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  g.out_h = (g.height + 2 * g.padding - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.padding - g.kw) / g.stride + 1;

  Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
  T* po = out.mutable_values().data();
  const T* px = x.data();
  const T* pw = weight.data();
  const std::size_t in_plane = g.height * g.width;
  const std::size_t op = g.out_plane();
  if (bias.defined()) {
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.out_channels; ++c)
        std::fill_n(po + (b * g.out_channels + c) * op, op, bias.data()[c]);
  }
  if (g.depthwise()) {
    const std::size_t taps = g.kh * g.kw;
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const T* in = px + (b * g.in_channels + c) * in_plane;
        T* dst = po + (b * g.out_channels + c) * op;
        const T* w = pw + c * taps;
        for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t t) { dst[o] += w[t] * in[i]; });
      }
  } else {
    std::vector<T> col(g.pointwise() ? 0 : g.patch() * op);
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* in = px + (b * g.in_channels + grp * g.in_per_group()) * in_plane;
        const T* cols = in;
        if (!g.pointwise()) {
          im2col(in, g, col.data());
          cols = col.data();
        }
        kernels::gemm(false, false, g.out_per_group(), op, g.patch(),
                      pw + grp * g.out_per_group() * g.patch(), cols,
                      po + (b * g.out_channels + grp * g.out_per_group()) * op);
      }
  }

  Tape<T>* tape = recording_tape({&x, &weight, &bias});
  finish(out, tape, "conv2d");
  if (tape != nullptr) {
    tape->record("conv2d", [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(),
                            g, in_plane, op] {
      if (oi->grad.empty()) return;
      const T* grad = oi->grad.data();
      const T* px = xi->values.data();
      const T* pw = wi->values.data();
      if (wants_grad(bi)) {
        T* gb = bi->ensure_grad();
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t c = 0; c < g.out_channels; ++c) {
            const T* gr = grad + (b * g.out_channels + c) * op;
            T acc = 0;
            for (std::size_t i = 0; i < op; ++i) acc += gr[i];
            gb[c] += acc;
          }
      }
      const bool need_x = wants_grad(xi);
      const bool need_w = wants_grad(wi);
      if (g.depthwise()) {
        const std::size_t taps = g.kh * g.kw;
        T* gx = need_x ? xi->ensure_grad() : nullptr;
        T* gw = need_w ? wi->ensure_grad() : nullptr;
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            const T* in = px + (b * g.in_channels + c) * in_plane;
            const T* gr = grad + (b * g.out_channels + c) * op;
            const T* w = pw + c * taps;
            T* gxc = need_x ? gx + (b * g.in_channels + c) * in_plane : nullptr;
            T* gwc = need_w ? gw + c * taps : nullptr;
            for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t t) {
              if (gxc) gxc[i] += w[t] * gr[o];
              if (gwc) gwc[t] += in[i] * gr[o];
            });
          }
        return;
      }
      std::vector<T> col(g.pointwise() ? 0 : g.patch() * op);
      std::vector<T> dcol(g.pointwise() || !need_x ? 0 : g.patch() * op);
      for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
          const std::size_t in_off = (b * g.in_channels + grp * g.in_per_group()) * in_plane;
          const T* gr = grad + (b * g.out_channels + grp * g.out_per_group()) * op;
          const T* w = pw + grp * g.out_per_group() * g.patch();
          if (need_w) {
            const T* cols = px + in_off;
            if (!g.pointwise()) {
              im2col(px + in_off, g, col.data());
              cols = col.data();
            }
            kernels::gemm(false, true, g.out_per_group(), g.patch(), op, gr, cols,
                          wi->ensure_grad() + grp * g.out_per_group() * g.patch());
          }
          if (need_x) {
            T* gx = xi->ensure_grad() + in_off;
            if (g.pointwise()) {
              kernels::gemm(true, false, g.patch(), op, g.out_per_group(), w, gr, gx);
            } else {
              std::fill(dcol.begin(), dcol.end(), T(0));
              kernels::gemm(true, false, g.patch(), op, g.out_per_group(), w, gr, dcol.data());
              col2im(dcol.data(), g, gx);
            }
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& alpha, const Tensor<T>& beta) {
  require_defined(x, "channel_affine", "input");
  if (x.rank() != 4)
    throw ShapeError("channel_affine: expects (B, C, H, W), got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  if (alpha.numel() != channels || beta.numel() != channels)
    throw ConfigError("affine: parameters sized " + std::to_string(alpha.numel()) + "/" +
                      std::to_string(beta.numel()) + " for " + std::to_string(channels) +
                      " channels");
  Tensor<T> out(x.shape());
  T* po = out.mutable_values().data();
  const T* px = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      const T a = alpha.data()[c];
      const T s = beta.data()[c];
      for (std::size_t i = 0; i < plane; ++i) po[base + i] = px[base + i] * a + s;
    }
  Tape<T>* tape = recording_tape({&x, &alpha, &beta});
  finish(out, tape, "channel_affine");
  if (tape != nullptr) {
    tape->record("channel_affine", [xi = x.impl(), ai = alpha.impl(), si = beta.impl(),
                                    oi = out.impl(), batch, channels, plane] {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (b * channels + c) * plane;
          T sum_g = 0;
          T sum_gx = 0;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += g[base + i];
            sum_gx += g[base + i] * xi->values[base + i];
          }
          if (wants_grad(ai)) ai->ensure_grad()[c] += sum_gx;
          if (wants_grad(si)) si->ensure_grad()[c] += sum_g;
          if (wants_grad(xi)) {
            T* gx = xi->ensure_grad() + base;
            const T a = ai->values[c];
            for (std::size_t i = 0; i < plane; ++i) gx[i] += g[base + i] * a;
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require_defined(logits, "cross_entropy", "logits");
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty())
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  std::vector<T> probs(batch * classes);
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes)
      throw ContractError("cross_entropy: label " + std::to_string(labels[b]) +
                          " outside [0, " + std::to_string(classes) + ")");
    const T* row = logits.data() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[b * classes + k] = std::exp(row[k] - peak);
      total += probs[b * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] /= total;
    loss += std::log(total) + peak - row[labels[b]];
  }
  loss /= static_cast<T>(batch);
  Tensor<T> out = Tensor<T>::scalar(loss);
  Tape<T>* tape = recording_tape({&logits});
  finish(out, tape, "cross_entropy");
  if (tape != nullptr) {
    tape->record("cross_entropy", [li = logits.impl(), oi = out.impl(), probs = std::move(probs),
                                   labels, batch, classes] {
      if (oi->grad.empty()) return;
      T* gl = li->ensure_grad();
      const T g = oi->grad[0] / static_cast<T>(batch);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < classes; ++k) {
          const T onehot = static_cast<std::size_t>(labels[b]) == k ? T(1) : T(0);
          gl[b * classes + k] += g * (probs[b * classes + k] - onehot);
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw ConfigError("dropout: rate must be < 1");
  std::vector<T> mask(x.numel());
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  for (auto& m : mask) m = rng->uniform() < p ? T(0) : keep_scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

#define DHVT_INSTANTIATE_OPS(T)                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);               \
  template Tensor<T> transpose_last(const Tensor<T>&);                                         \
  template Tensor<T> narrow(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                             \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> softmax(const Tensor<T>&);                                                \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> batchnorm2d(const Tensor<T>&, BatchNormState<T>&, Mode);                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                            const Conv2dOptions&);                                             \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&);                 \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng*);

DHVT_INSTANTIATE_OPS(float)
DHVT_INSTANTIATE_OPS(double)

#undef DHVT_INSTANTIATE_OPS

}  // namespace ops
}  // namespace dhvt
