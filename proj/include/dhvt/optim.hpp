#pragma once

#include <cstddef>
#include <vector>

#include "dhvt/param_store.hpp"

namespace dhvt {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// AdamW with decoupled weight decay: the decay term scales the weights
// directly and never enters the moment estimates. Moment buffers are
// allocated on the first step. Only trainable entries are updated; entries
// without an accumulated gradient are treated as having a zero gradient.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  void step(ParamStore<T>& params);
  // Same update with an explicit learning rate (for schedules).
  void step(ParamStore<T>& params, double lr);

  std::size_t steps_taken() const { return steps_; }
  const AdamWOptions& options() const { return options_; }

 private:
  AdamWOptions options_;
  std::size_t steps_ = 0;
  std::vector<std::vector<T>> first_moment_;
  std::vector<std::vector<T>> second_moment_;
};

// Linear warm-up from 0 to base_lr over warmup_steps, then cosine decay that
// reaches 0 at total_steps.
double warmup_cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                        double base_lr);

}  // namespace dhvt
