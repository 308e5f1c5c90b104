#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dhvt/config.hpp"
#include "dhvt/param_store.hpp"

namespace dhvt {

struct GradcheckOptions {
  std::size_t samples = 200;
  double step = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
  // Runs after backward and before the comparison; lets tests corrupt grads.
  std::function<void(ParamStore<double>&)> after_backward;
};

struct GradcheckSample {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_name;
  std::vector<GradcheckSample> offenders;  // samples above tolerance, worst first
  bool passed = false;

  std::string to_text() const;
};

// Central finite differences of a cross-entropy loss on random inputs and
// labels against the tape gradient, in f64 and train mode, over
// `samples` trainable scalars drawn uniformly without replacement.
GradcheckReport gradcheck(const ModelConfig& cfg, const GradcheckOptions& options = {});

}  // namespace dhvt
