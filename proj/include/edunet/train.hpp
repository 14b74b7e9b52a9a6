#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "edunet/checkpoint.hpp"
#include "edunet/data.hpp"
#include "edunet/metrics.hpp"

namespace edunet {

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  ///< learning rate used during the epoch
};

struct TrainResult {
  Checkpoint best;  ///< lowest validation loss (the initial model when no epoch ran)
  Checkpoint last;
  std::vector<TrainLogRow> log;
};

using EpochCallback = std::function<void(const TrainLogRow&)>;

/// Seeded training loop. Random streams derive from train.seed: "init" for parameters,
/// "shuffle"/epoch for the sample order, "augment"/epoch/sample for augmentation and
/// "droppath"/epoch/batch for stochastic depth. Throws NumericError on a non-finite loss.
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const RunSettings& settings, const EpochCallback& on_epoch = {});

/// Splits `dataset` by fold: the fold is held out for validation and the rest trains.
/// With a single fold both sets are the whole dataset.
struct FoldSplit {
  std::vector<Sample> train;
  std::vector<Sample> held_out;
};
FoldSplit split_fold(const std::vector<Sample>& dataset, const FoldSpec& folds, int fold);

struct CrossValResult {
  std::vector<MetricsReport> folds;
  std::vector<ClassAggregate> aggregate;
  std::vector<std::vector<TrainLogRow>> logs;
  bool train_equals_eval = false;  ///< k = 1
};

CrossValResult cross_validate(const std::vector<Sample>& dataset, const FoldSpec& folds,
                              const RunSettings& settings, const std::string& dataset_name = "data",
                              const std::function<void(int fold, const TrainLogRow&)>& on_epoch = {});

void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& log);

}  // namespace edunet
