#include "dhvt/tensor.hpp"

#include <atomic>
#include <sstream>

#include "dhvt/error.hpp"

namespace dhvt {
namespace {
std::atomic<bool> g_finite_checks{false};
}

std::string dtype_name(Dtype dtype) { return dtype == Dtype::kF32 ? "f32" : "f64"; }

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

template <typename T>
T* TensorImpl<T>::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), T(0));
  return grad.data();
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->values.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw ContractError("item() needs a single-element tensor, got shape " + shape_str(shape()));
  return impl_->values[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank())
    throw ShapeError("index rank " + std::to_string(index.size()) + " for tensor of shape " +
                     shape_str(shape()));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    offset = offset * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->values[offset];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor(shape());
  return Tensor(shape(), impl_->grad);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl_->values);
}

template <typename T>
void Tape<T>::record(const char* op, std::function<void()> vjp) {
  nodes_.push_back(Node{op, std::move(vjp)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
  if (!loss.requires_grad())
    throw ContractError("backward: loss was not produced on a tape from trainable inputs");
  loss.impl()->ensure_grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->vjp();
  nodes_.clear();
}

template <typename T>
Tape<T>*& Tape<T>::current_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(Tape<T>::current_slot()) {
  Tape<T>::current_slot() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  Tape<T>::current_slot() = previous_;
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;

}  // namespace dhvt
