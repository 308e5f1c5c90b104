#pragma once

// Exact parameter and multiply-accumulate counts per named submodule.
//
// MAC convention (batch 1): a convolution costs Cout * Cin/groups * kh * kw *
// H' * W', a linear layer in * out per token, and attention the two S^2 * D
// products per block (S = sequence length including head tokens). Norms,
// activations, softmax, pooling and elementwise ops are free. Attention
// products are kept as separately tagged entries so that both the full total
// and the parametric-layer-only total are available.

#include <cstdint>
#include <string>
#include <vector>

#include "dhvt/config.hpp"
#include "dhvt/param_store.hpp"

namespace dhvt {

enum class CostKind {
  kTensor,     // one parameter tensor
  kLayer,      // conv / linear MACs
  kAttention,  // parameter-free attention matrix products
};

struct CostEntry {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  CostKind kind = CostKind::kTensor;
};

struct CostReport {
  ModelConfig config;
  std::vector<CostEntry> entries;

  std::uint64_t total_params() const;
  // Every counted MAC, attention products included.
  std::uint64_t total_macs() const;
  // Conv and linear layers only.
  std::uint64_t layer_macs() const;
  std::uint64_t attention_macs() const { return total_macs() - layer_macs(); }

  // Sums entries whose names agree on the first `depth` dot-separated parts,
  // keeping first-appearance order. Attention entries keep their own rows.
  std::vector<CostEntry> rollup(std::size_t depth) const;

  std::string to_text(std::size_t depth = 2) const;
  std::string to_json(std::size_t depth = 2) const;
};

// Trainable tensors only; BatchNorm running statistics are excluded.
template <typename T>
CostReport count_params(const ParamStore<T>& store);

CostReport count_macs(const ModelConfig& cfg);

// Both counts for one config, parameters from a freshly built float model.
CostReport count_cost(const ModelConfig& cfg);

}  // namespace dhvt
