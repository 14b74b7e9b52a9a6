#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "edunet/checkpoint.hpp"
#include "edunet/data.hpp"
#include "edunet/loss.hpp"

namespace edunet {

struct ClassCounts {
  std::int64_t tp = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;

  std::int64_t predicted() const { return tp + fp; }
  std::int64_t truth() const { return tp + fn; }
  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fn += o.fn;
    fp += o.fp;
    return *this;
  }
};

ClassCounts count_class(const LabelMap& pred, const LabelMap& truth, int cls);

struct ClassSummary {
  int cls = 0;
  ClassCounts totals;
  /// NaN when no sample qualifies.
  double dsc = 0.0;
  double sensitivity = 0.0;
  int dsc_samples = 0;   ///< samples where the class occurs in prediction or truth
  int sens_samples = 0;  ///< samples where the class occurs in the truth
};

struct MetricsReport {
  std::string dataset;
  int fold = 0;
  int num_classes = 0;
  bool pooled = false;
  std::vector<std::vector<ClassCounts>> per_sample;  ///< [sample][class]
  std::vector<ClassSummary> classes;                 ///< foreground classes 1..C-1

  /// Mean DSC over the foreground classes that have a defined value.
  double mean_foreground_dsc() const;
};

/// Per class c >= 1. Default: per-sample DSC and sensitivity averaged over the samples where
/// they are defined (DSC: class present in prediction or truth; sensitivity: present in
/// truth). Pooled: ratios of the summed counts.
MetricsReport compute_metrics(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                              int num_classes, bool pooled = false);

enum class PredictionSource { Fused, Global, Local };
PredictionSource parse_prediction_source(const std::string& s);

/// Samples are fitted to the model input size (center crop + resize) when needed.
std::vector<Sample> fit_to_input(const std::vector<Sample>& samples, const EDUNetConfig& cfg);

/// Eval-mode argmax predictions for samples already at the model input size.
std::vector<LabelMap> predict(ParamStore& store, const EDUNetConfig& cfg,
                              const std::vector<Sample>& samples,
                              PredictionSource source = PredictionSource::Fused, int batch_size = 4);

/// Eval-mode combined loss averaged over samples.
double evaluation_loss(ParamStore& store, const RunSettings& settings,
                       const std::vector<Sample>& samples);

struct EvalOptions {
  bool pooled = false;
  PredictionSource source = PredictionSource::Fused;
  std::string dataset;
  int fold = 0;
};

MetricsReport evaluate(Checkpoint& ckpt, const std::vector<Sample>& samples,
                       const EvalOptions& opt = {});

struct ClassAggregate {
  int cls = 0;
  int folds = 0;  ///< folds with a defined DSC
  double dsc_mean = 0.0;
  double dsc_std = 0.0;  ///< sample standard deviation; 0 for a single fold
  double sens_mean = 0.0;
  double sens_std = 0.0;
  ClassCounts totals;
};

std::vector<ClassAggregate> aggregate_folds(const std::vector<MetricsReport>& folds);

/// `dataset,fold,class,dsc,sensitivity,tp,fn,fp` rows per fold and class, then one
/// aggregate row per class whose fold column reads `mean±std` and whose ratio columns hold
/// `mean±std` values.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& folds,
                       const std::string& aggregate_label = "mean±std");

}  // namespace edunet
