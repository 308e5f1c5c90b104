#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dhvt/data.hpp"
#include "dhvt/model.hpp"
#include "dhvt/run_config.hpp"

namespace dhvt {

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // optimizer steps completed at the end of the epoch
  double lr = 0.0;        // learning rate of the epoch's last step
  double loss = 0.0;      // mean training loss over the epoch
  double train_acc = 0.0; // train-mode accuracy over the epoch's batches
};

struct TrainResult {
  std::vector<EpochRecord> log;
  // Steps completed at the end of the first epoch with train_acc == 1.
  std::optional<std::size_t> steps_to_perfect;
  double best_acc = 0.0;
  double final_eval_acc = 0.0;  // eval mode, whole training set
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

std::string format_record(const EpochRecord& r);
std::string csv_header();
std::string csv_row(const EpochRecord& r);

Dataset load_dataset(const DataSpec& spec, CifarSplit split);

// Trains `model` in place. Writes train_log.txt, train_log.csv, last.ckpt and
// best.ckpt under rc.out_dir when it is set. A non-finite loss aborts with a
// NumericError naming the first op or parameter that went non-finite.
template <typename T>
TrainResult train_model(Model<T>& model, const RunConfig& rc, const Dataset& data);

// Builds the configured model (seed rc.seed) and trains it.
TrainResult train(const RunConfig& rc, const Dataset& data);

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size);

}  // namespace dhvt
