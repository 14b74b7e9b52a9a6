#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "edunet/edunet.hpp"
#include "edunet/param_store.hpp"

namespace edunet {

struct TrainConfig {
  double alpha = 1.0;  ///< weight of the global-branch Dice loss
  double beta = 1.0;   ///< weight of the local-branch Dice loss
  double lr = 1e-4;
  int batch_size = 4;
  int max_epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double plateau_min_lr = 1e-6;
  double plateau_threshold = 1e-4;
  std::uint64_t seed = 0;
  double dice_smooth = 1.0;
  bool include_background_in_loss = false;

  void validate(const EDUNetConfig& model) const;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over every parameter that holds a gradient. Parameters without a
/// gradient are left alone; the step counter advances once per call.
void adam_step(ParamStore& store, AdamState& state, double lr, const AdamHyper& hyper = {});

/// ReduceLROnPlateau in "min" mode with a relative improvement threshold.
struct PlateauScheduler {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-6;
  double threshold = 1e-4;
  double best = std::numeric_limits<double>::infinity();
  int num_bad = 0;

  static PlateauScheduler from(const TrainConfig& cfg);
  /// Records one validation loss and returns the learning rate for the next epoch.
  double step(double val_loss, double lr);
};

}  // namespace edunet
