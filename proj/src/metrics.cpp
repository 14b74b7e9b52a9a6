#include "edunet/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "edunet/ops.hpp"

namespace edunet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_ratio(double v) { return std::isfinite(v) ? format_double(v) : "n/a"; }

std::vector<const Sample*> batch_ptrs(const std::vector<Sample>& samples, std::size_t begin,
                                      std::size_t end) {
  std::vector<const Sample*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&samples[i]);
  return out;
}

}  // namespace

ClassCounts count_class(const LabelMap& pred, const LabelMap& truth, int cls) {
  if (pred.size() != truth.size()) throw std::invalid_argument("count_class: size mismatch");
  ClassCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls, t = truth[i] == cls;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

double MetricsReport::mean_foreground_dsc() const {
  double s = 0;
  int n = 0;
  for (const auto& c : classes)
    if (std::isfinite(c.dsc)) {
      s += c.dsc;
      ++n;
    }
  return n ? s / n : kNaN;
}

MetricsReport compute_metrics(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                              int num_classes, bool pooled) {
  if (preds.size() != truths.size())
    throw std::invalid_argument("compute_metrics: prediction and truth counts differ");
  if (num_classes < 2) throw std::invalid_argument("compute_metrics: need at least 2 classes");
  MetricsReport r;
  r.num_classes = num_classes;
  r.pooled = pooled;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<ClassCounts> row;
    for (int c = 0; c < num_classes; ++c) row.push_back(count_class(preds[i], truths[i], c));
    r.per_sample.push_back(std::move(row));
  }
  for (int c = 1; c < num_classes; ++c) {
    ClassSummary s;
    s.cls = c;
    double dsc_sum = 0, sens_sum = 0;
    for (const auto& row : r.per_sample) {
      const ClassCounts& k = row[static_cast<std::size_t>(c)];
      s.totals += k;
      if (k.predicted() + k.truth() > 0) {
        dsc_sum += 2.0 * static_cast<double>(k.tp) / static_cast<double>(k.predicted() + k.truth());
        ++s.dsc_samples;
      }
      if (k.truth() > 0) {
        sens_sum += static_cast<double>(k.tp) / static_cast<double>(k.truth());
        ++s.sens_samples;
      }
    }
    if (pooled) {
      const auto& t = s.totals;
      s.dsc = t.predicted() + t.truth() > 0
                  ? 2.0 * static_cast<double>(t.tp) / static_cast<double>(t.predicted() + t.truth())
                  : kNaN;
      s.sensitivity = t.truth() > 0 ? static_cast<double>(t.tp) / static_cast<double>(t.truth()) : kNaN;
    } else {
      s.dsc = s.dsc_samples ? dsc_sum / s.dsc_samples : kNaN;
      s.sensitivity = s.sens_samples ? sens_sum / s.sens_samples : kNaN;
    }
    r.classes.push_back(s);
  }
  return r;
}

PredictionSource parse_prediction_source(const std::string& s) {
  if (s == "fused") return PredictionSource::Fused;
  if (s == "global") return PredictionSource::Global;
  if (s == "local") return PredictionSource::Local;
  throw std::invalid_argument("unknown prediction source '" + s + "' (expected fused, global or local)");
}

std::vector<Sample> fit_to_input(const std::vector<Sample>& samples, const EDUNetConfig& cfg) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    s.validate(cfg.num_classes);
    if (s.height == cfg.input_h && s.width == cfg.input_w)
      out.push_back(s);
    else
      out.push_back(center_crop_resize(s, cfg.input_h, cfg.input_w));
  }
  return out;
}

std::vector<LabelMap> predict(ParamStore& store, const EDUNetConfig& cfg,
                              const std::vector<Sample>& samples, PredictionSource source,
                              int batch_size) {
  if ((source == PredictionSource::Global && !cfg.use_global) ||
      (source == PredictionSource::Local && !cfg.use_local))
    throw std::invalid_argument("predict: the requested branch is disabled");
  InferenceGuard guard(store);
  const RunContext ctx{};
  std::vector<LabelMap> out;
  const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t b = 0; b < samples.size(); b += bs) {
    const Tensor x = images_to_tensor(batch_ptrs(samples, b, std::min(samples.size(), b + bs)));
    const EDUNetOutput o = edunet_forward(x, cfg, store, ctx);
    Tensor prob = o.fused_prob;
    if (source == PredictionSource::Global) prob = softmax(o.logits_global, 1);
    if (source == PredictionSource::Local) prob = softmax(o.logits_local, 1);
    for (auto& m : argmax_masks(prob)) out.push_back(std::move(m));
  }
  return out;
}

double evaluation_loss(ParamStore& store, const RunSettings& settings,
                       const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluation_loss: no samples");
  InferenceGuard guard(store);
  const RunContext ctx{};
  const EDUNetConfig& cfg = settings.model;
  const auto bs = static_cast<std::size_t>(settings.train.batch_size);
  double total = 0;
  for (std::size_t b = 0; b < samples.size(); b += bs) {
    const auto batch = batch_ptrs(samples, b, std::min(samples.size(), b + bs));
    std::vector<const LabelMap*> masks;
    for (const Sample* s : batch) masks.push_back(&s->mask);
    const Tensor x = images_to_tensor(batch);
    const Tensor target = one_hot(masks, cfg.num_classes, cfg.input_h, cfg.input_w);
    const LossTerms l = combined_loss(edunet_forward(x, cfg, store, ctx), target, settings.train);
    total += l.total.item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(samples.size());
}

MetricsReport evaluate(Checkpoint& ckpt, const std::vector<Sample>& samples, const EvalOptions& opt) {
  const EDUNetConfig& cfg = ckpt.settings.model;
  const std::vector<Sample> fitted = fit_to_input(samples, cfg);
  std::vector<LabelMap> truths;
  for (const Sample& s : fitted) truths.push_back(s.mask);
  MetricsReport r = compute_metrics(predict(ckpt.store, cfg, fitted, opt.source), truths,
                                    cfg.num_classes, opt.pooled);
  r.dataset = opt.dataset;
  r.fold = opt.fold;
  return r;
}

std::vector<ClassAggregate> aggregate_folds(const std::vector<MetricsReport>& folds) {
  std::vector<ClassAggregate> out;
  if (folds.empty()) return out;
  const int c_count = folds.front().num_classes;
  for (int c = 1; c < c_count; ++c) {
    ClassAggregate a;
    a.cls = c;
    std::vector<double> dsc, sens;
    for (const auto& f : folds) {
      if (f.num_classes != c_count) throw std::invalid_argument("aggregate_folds: class counts differ");
      const ClassSummary& s = f.classes[static_cast<std::size_t>(c - 1)];
      a.totals += s.totals;
      if (std::isfinite(s.dsc)) dsc.push_back(s.dsc);
      if (std::isfinite(s.sensitivity)) sens.push_back(s.sensitivity);
    }
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
      if (v.empty()) {
        mean = sd = kNaN;
        return;
      }
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - m) * (x - m);
      mean = m;
      sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    a.folds = static_cast<int>(dsc.size());
    mean_std(dsc, a.dsc_mean, a.dsc_std);
    mean_std(sens, a.sens_mean, a.sens_std);
    out.push_back(a);
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& folds,
                       const std::string& aggregate_label) {
  out << "dataset,fold,class,dsc,sensitivity,tp,fn,fp\n";
  for (const auto& f : folds)
    for (const auto& c : f.classes)
      out << f.dataset << ',' << f.fold << ',' << c.cls << ',' << format_ratio(c.dsc) << ','
          << format_ratio(c.sensitivity) << ',' << c.totals.tp << ',' << c.totals.fn << ','
          << c.totals.fp << '\n';
  if (folds.empty()) return;
  for (const auto& a : aggregate_folds(folds))
    out << folds.front().dataset << ',' << aggregate_label << ',' << a.cls << ','
        << format_ratio(a.dsc_mean) << "±" << format_ratio(a.dsc_std) << ','
        << format_ratio(a.sens_mean) << "±" << format_ratio(a.sens_std) << ',' << a.totals.tp << ','
        << a.totals.fn << ',' << a.totals.fp << '\n';
}

}  // namespace edunet
