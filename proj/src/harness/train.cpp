#include "dhvt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dhvt/checkpoint.hpp"
#include "dhvt/error.hpp"
#include "dhvt/optim.hpp"

namespace dhvt {
namespace {

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t classes = logits.dim(1);
  const auto v = logits.values();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = v.subspan(i * classes, classes);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == labels[i]) ++correct;
  }
  return correct;
}

// Reruns the failing batch with per-op finiteness checks to find the op that
// first produced a non-finite value.
template <typename T>
std::string diagnose_non_finite(Model<T>& model, const Tensor<T>& images) {
  for (const auto& e : model.params().entries())
    for (T v : e.tensor.values())
      if (!std::isfinite(static_cast<double>(v))) return "parameter '" + e.name + "' is non-finite";
  for (T v : images.values())
    if (!std::isfinite(static_cast<double>(v))) return "input batch is non-finite";
  const bool was = finite_checks_enabled();
  set_finite_checks(true);
  std::string what = "no non-finite intermediate reproduced";
  try {
    model.forward(images, Mode::kEval);
  } catch (const NumericError& e) {
    what = e.what();
  }
  set_finite_checks(was);
  return what;
}

}  // namespace

std::string format_record(const EpochRecord& r) {
  char line[256];
  std::snprintf(line, sizeof line, "epoch %zu steps %zu lr %.17g loss %.17g train_acc %.17g",
                r.epoch, r.steps, r.lr, r.loss, r.train_acc);
  return line;
}

std::string csv_header() { return "epoch,steps,lr,loss,train_acc"; }

std::string csv_row(const EpochRecord& r) {
  char line[256];
  std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g", r.epoch, r.steps, r.lr, r.loss,
                r.train_acc);
  return line;
}

Dataset load_dataset(const DataSpec& spec, CifarSplit split) {
  if (spec.kind == DataSpec::Kind::kCifar)
    return load_cifar_binary(spec.cifar_dir, split, spec.norm);
  // Synthetic data has no held-out split; both splits are the same draw.
  return gen_synthetic(spec.classes, spec.samples, spec.size, spec.seed);
}

template <typename T>
TrainResult train_model(Model<T>& model, const RunConfig& rc, const Dataset& data) {
  if (data.size() == 0) throw ContractError("cannot train on an empty dataset");
  if (data.num_classes > model.config().num_classes)
    throw ConfigError("dataset has " + std::to_string(data.num_classes) +
                      " classes but the model predicts " +
                      std::to_string(model.config().num_classes));
  const std::size_t batch = std::min(rc.batch_size, data.size());
  const std::size_t per_epoch = (data.size() + batch - 1) / batch;
  const std::size_t total = per_epoch * rc.epochs;
  const auto warmup = static_cast<std::size_t>(std::llround(rc.warmup_epochs * per_epoch));

  std::ofstream text_log, csv_log;
  if (!rc.out_dir.empty()) {
    std::filesystem::create_directories(rc.out_dir);
    save_json(to_json(rc), rc.out_dir / "run_config.json");
    text_log.open(rc.out_dir / "train_log.txt", std::ios::app);
    csv_log.open(rc.out_dir / "train_log.csv", std::ios::trunc);
    if (!text_log || !csv_log) throw IoError("cannot write logs under " + rc.out_dir.string());
    csv_log << csv_header() << "\n";
  }

  AdamW<T> opt(AdamWOptions{rc.base_lr, 0.9, 0.999, 1e-8, rc.weight_decay});
  Rng order_rng(rc.seed + 1);
  Rng augment_rng(rc.seed + 3);
  model.seed_dropout(rc.seed + 2);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < rc.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(begin + batch, data.size());
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Tensor<T> images = gather_images<T>(data, idx);
      const std::vector<int> labels = gather_labels(data, idx);
      augment(images, rc.flip, rc.crop, augment_rng);

      Tape<T> tape;
      Tensor<T> logits, loss;
      {
        TapeScope<T> scope(tape);
        logits = model.forward(images, Mode::kTrain);
        loss = ops::cross_entropy(logits, labels);
      }
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at step " + std::to_string(step) + ": " +
                           diagnose_non_finite(model, images));
      model.params().zero_grad();
      tape.backward(loss);
      lr = warmup_cosine_lr(step, warmup, total, rc.base_lr);
      opt.step(model.params(), lr);

      loss_sum += loss_value * static_cast<double>(labels.size());
      correct += count_correct(logits, labels);
    }
    EpochRecord rec{epoch, step, lr, loss_sum / static_cast<double>(data.size()),
                    static_cast<double>(correct) / static_cast<double>(data.size())};
    result.log.push_back(rec);
    if (text_log.is_open()) {
      text_log << format_record(rec) << "\n";
      csv_log << csv_row(rec) << "\n";
    }
    const bool improved = rec.train_acc > result.best_acc || epoch == 0;
    if (improved) {
      result.best_acc = std::max(result.best_acc, rec.train_acc);
      if (!rc.out_dir.empty())
        save_checkpoint(model.params(), model.config(), rc.out_dir / "best.ckpt");
    }
    if (rec.train_acc == 1.0 && !result.steps_to_perfect) {
      result.steps_to_perfect = step;
      if (rc.stop_at_perfect) break;
    }
  }
  result.final_eval_acc = evaluate(model, data, batch).accuracy;
  if (!rc.out_dir.empty()) {
    save_checkpoint(model.params(), model.config(), rc.out_dir / "last.ckpt");
    text_log << "final eval_acc " << result.final_eval_acc << "\n";
  }
  return result;
}

TrainResult train(const RunConfig& rc, const Dataset& data) {
  if (rc.dtype == Dtype::kF64) {
    Model<double> model = Model<double>::build(rc.model, rc.seed);
    return train_model(model, rc, data);
  }
  Model<float> model = Model<float>::build(rc.model, rc.seed);
  return train_model(model, rc, data);
}

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size) {
  EvalResult r;
  r.samples = data.size();
  if (data.size() == 0) return r;
  batch_size = std::max<std::size_t>(1, batch_size);
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, data.size());
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<T> images = gather_images<T>(data, idx);
    const std::vector<int> labels = gather_labels(data, idx);
    const Tensor<T> logits = model.forward(images, Mode::kEval);
    loss_sum += static_cast<double>(ops::cross_entropy(logits, labels).item()) *
                static_cast<double>(labels.size());
    correct += count_correct(logits, labels);
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

template TrainResult train_model(Model<float>&, const RunConfig&, const Dataset&);
template TrainResult train_model(Model<double>&, const RunConfig&, const Dataset&);
template EvalResult evaluate(Model<float>&, const Dataset&, std::size_t);
template EvalResult evaluate(Model<double>&, const Dataset&, std::size_t);

}  // namespace dhvt
