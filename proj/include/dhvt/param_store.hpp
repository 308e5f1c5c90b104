#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "dhvt/random.hpp"
#include "dhvt/tensor.hpp"

namespace dhvt {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  // false for buffers such as BatchNorm running statistics
  bool trainable = true;
};

// Named tensors of one model instance in registration order. Names are
// hierarchical ("blocks.3.attn.qkv.weight") and unique.
template <typename T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> tensor, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  // Throws ContractError for an unknown name.
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Scalar count of trainable values.
  std::size_t trainable_numel() const;
  void zero_grad();

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Creates, initializes and registers parameters under a name prefix.
// Initialization draws from the shared Rng in call order, so a fixed seed and
// a fixed construction order give bitwise-identical parameters.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(ParamStore<T>& store, Rng& rng, std::string prefix = {})
      : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

  ParamBuilder scope(const std::string& name) const;

  Tensor<T> trunc_normal(const std::string& name, Shape shape, double stddev = 0.02);
  Tensor<T> constant(const std::string& name, Shape shape, T value);
  Tensor<T> zeros(const std::string& name, Shape shape) { return constant(name, std::move(shape), T(0)); }
  Tensor<T> ones(const std::string& name, Shape shape) { return constant(name, std::move(shape), T(1)); }
  Tensor<T> buffer(const std::string& name, Shape shape, T value);

  std::string qualified(const std::string& name) const;

 private:
  ParamStore<T>* store_;
  Rng* rng_;
  std::string prefix_;
};

}  // namespace dhvt
