#include "dhvt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dhvt/model.hpp"

namespace dhvt {

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "checked %zu parameters, max rel. error %.3e (%s)\n", checked,
                max_rel_error, worst_name.c_str());
  os << line;
  for (const auto& s : offenders) {
    std::snprintf(line, sizeof line, "  FAIL %s[%zu]: analytic %.10e numeric %.10e rel %.3e\n",
                  s.name.c_str(), s.index, s.analytic, s.numeric, s.rel_error);
    os << line;
  }
  os << (passed ? "PASS" : "FAIL") << "\n";
  return os.str();
}

GradcheckReport gradcheck(const ModelConfig& cfg, const GradcheckOptions& options) {
  Model<double> model = Model<double>::build(cfg, options.seed);
  Rng rng(options.seed + 101);
  Tensor<double> images({options.batch, cfg.in_channels, cfg.image_height, cfg.image_width});
  for (auto& v : images.mutable_values()) v = rng.normal();
  std::vector<int> labels(options.batch);
  for (auto& l : labels) l = static_cast<int>(rng.below(cfg.num_classes));

  auto loss_at = [&]() {
    return ops::cross_entropy(model.forward(images, Mode::kTrain), labels).item();
  };

  {
    Tape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      loss = ops::cross_entropy(model.forward(images, Mode::kTrain), labels);
    }
    model.params().zero_grad();
    tape.backward(loss);
  }
  if (options.after_backward) options.after_backward(model.params());

  // Flat index over trainable scalars.
  struct Slot {
    std::size_t entry;
    std::size_t offset;
  };
  auto& entries = model.params().entries();
  std::vector<std::size_t> starts;
  std::size_t total = 0;
  for (const auto& e : entries) {
    starts.push_back(total);
    if (e.trainable) total += e.tensor.numel();
  }
  std::vector<std::size_t> picks(total);
  for (std::size_t i = 0; i < total; ++i) picks[i] = i;
  const std::size_t count = std::min(options.samples, total);
  for (std::size_t i = 0; i < count; ++i) std::swap(picks[i], picks[i + rng.below(total - i)]);
  picks.resize(count);
  std::sort(picks.begin(), picks.end());

  auto locate = [&](std::size_t flat) {
    for (std::size_t k = entries.size(); k-- > 0;)
      if (entries[k].trainable && starts[k] <= flat) return Slot{k, flat - starts[k]};
    return Slot{0, 0};
  };

  GradcheckReport report;
  for (std::size_t flat : picks) {
    const Slot slot = locate(flat);
    auto& tensor = entries[slot.entry].tensor;
    double& value = tensor.mutable_values()[slot.offset];
    const double saved = value;
    value = saved + options.step;
    const double up = loss_at();
    value = saved - options.step;
    const double down = loss_at();
    value = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double analytic = tensor.has_grad() ? tensor.grad()[slot.offset] : 0.0;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    GradcheckSample s{entries[slot.entry].name, slot.offset, analytic, numeric,
                      std::abs(analytic - numeric) / denom};
    if (s.rel_error >= report.max_rel_error) {
      report.max_rel_error = s.rel_error;
      report.worst_name = s.name;
    }
    if (s.rel_error > options.tolerance) report.offenders.push_back(s);
    ++report.checked;
  }
  std::sort(report.offenders.begin(), report.offenders.end(),
            [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  report.passed = report.offenders.empty() && report.checked > 0;
  return report;
}

}  // namespace dhvt
