#include "dhvt/optim.hpp"

#include <cmath>
#include <numbers>

#include "dhvt/error.hpp"

namespace dhvt {

template <typename T>
void AdamW<T>::step(ParamStore<T>& params) {
  step(params, options_.lr);
}

template <typename T>
void AdamW<T>::step(ParamStore<T>& params, double lr) {
  auto& entries = params.entries();
  if (first_moment_.empty()) {
    first_moment_.resize(entries.size());
    second_moment_.resize(entries.size());
  } else if (first_moment_.size() != entries.size()) {
    throw ContractError("AdamW: parameter store changed size between steps");
  }
  ++steps_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (std::size_t e = 0; e < entries.size(); ++e) {
    auto& entry = entries[e];
    if (!entry.trainable) continue;
    auto values = entry.tensor.mutable_values();
    auto grad = entry.tensor.grad();
    auto& m = first_moment_[e];
    auto& v = second_moment_[e];
    if (m.empty()) {
      m.assign(values.size(), T(0));
      v.assign(values.size(), T(0));
    }
    const bool has_grad = !grad.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      double p = static_cast<double>(values[i]);
      p -= lr * options_.weight_decay * p;
      const double mi = options_.beta1 * static_cast<double>(m[i]) + (1.0 - options_.beta1) * g;
      const double vi =
          options_.beta2 * static_cast<double>(v[i]) + (1.0 - options_.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p -= lr * (mi / bias1) / (std::sqrt(vi / bias2) + options_.eps);
      values[i] = static_cast<T>(p);
    }
  }
}

double warmup_cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                        double base_lr) {
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps || step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace dhvt
