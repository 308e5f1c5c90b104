#include "dhvt/param_store.hpp"

#include "dhvt/error.hpp"

namespace dhvt {

template <typename T>
void ParamStore<T>::add(std::string name, Tensor<T> tensor, bool trainable) {
  if (index_.count(name) != 0) throw ContractError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(trainable);
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry<T>{std::move(name), std::move(tensor), trainable});
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParamStore<T>::trainable_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
ParamBuilder<T> ParamBuilder<T>::scope(const std::string& name) const {
  return ParamBuilder(*store_, *rng_, qualified(name));
}

template <typename T>
std::string ParamBuilder<T>::qualified(const std::string& name) const {
  return prefix_.empty() ? name : prefix_ + "." + name;
}

template <typename T>
Tensor<T> ParamBuilder<T>::trunc_normal(const std::string& name, Shape shape, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<T>(rng_->truncated_normal(stddev));
  store_->add(qualified(name), t, true);
  return t;
}

template <typename T>
Tensor<T> ParamBuilder<T>::constant(const std::string& name, Shape shape, T value) {
  Tensor<T> t = Tensor<T>::full(std::move(shape), value);
  store_->add(qualified(name), t, true);
  return t;
}

template <typename T>
Tensor<T> ParamBuilder<T>::buffer(const std::string& name, Shape shape, T value) {
  Tensor<T> t = Tensor<T>::full(std::move(shape), value);
  store_->add(qualified(name), t, false);
  return t;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBuilder<float>;
template class ParamBuilder<double>;

}  // namespace dhvt
