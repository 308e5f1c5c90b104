#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dhvt {

using Shape = std::vector<std::size_t>;

enum class Dtype { kF32, kF64 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
  return Dtype::kF32;
}
template <>
constexpr Dtype dtype_of<double>() {
  return Dtype::kF64;
}

std::string dtype_name(Dtype dtype);
std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Turns on a finiteness check after every forward op. Off by default; the
// training loop enables it to locate the op that first produced a NaN.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;

  T* ensure_grad();
};

// Dense row-major array. Copies are shallow: they share the same storage and
// gradient buffer, which is how parameters are shared between a ParamStore and
// the layers that use them. Values produced by ops are never mutated afterwards;
// only parameters (by the optimizer or checkpoint loader) and BatchNorm running
// statistics change in place.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->values.size(); }
  static constexpr Dtype dtype() { return dtype_of<T>(); }

  std::span<const T> values() const { return impl_->values; }
  std::span<T> mutable_values() { return impl_->values; }
  const T* data() const { return impl_->values.data(); }
  T item() const;
  // Element access by multi-index; meant for tests and diagnostics.
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  // The gradient as a standalone tensor (zeros when none was accumulated).
  Tensor grad_tensor() const;
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy of the values, detached from any gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Records vector-Jacobian products of a single forward pass in execution order.
template <typename T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::function<void()> vjp;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::function<void()> vjp);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every node in reverse recording order,
  // then drops the nodes. Throws ContractError for a non-scalar loss.
  void backward(const Tensor<T>& loss);

  // The tape ops currently record onto (nullptr when no TapeScope is open).
  static Tape* current() { return current_slot(); }
  static Tape*& current_slot();

 private:
  std::vector<Node> nodes_;
};

// Makes `tape` the recording target for the current thread while alive.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

}  // namespace dhvt
