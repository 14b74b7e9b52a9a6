#include "edunet/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "edunet/loss.hpp"
#include "edunet/ops.hpp"

namespace edunet {

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const RunSettings& settings, const EpochCallback& on_epoch) {
  settings.validate();
  if (train_set.empty()) throw DataError("train: the training set is empty");
  if (val_set.empty()) throw DataError("train: the validation set is empty");
  const EDUNetConfig& cfg = settings.model;
  const TrainConfig& tc = settings.train;
  const std::vector<Sample> data = fit_to_input(train_set, cfg);
  const std::vector<Sample> val = fit_to_input(val_set, cfg);

  Checkpoint ck = init_checkpoint(settings);
  const Rng root(tc.seed);
  const AdamHyper hyper{tc.adam_beta1, tc.adam_beta2, tc.adam_eps};
  TrainResult result;
  result.best = ck.clone();
  double best_val = std::numeric_limits<double>::infinity();

  const auto bs = static_cast<std::size_t>(tc.batch_size);
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = root.fork("shuffle").fork(e);
    shuffle.shuffle(order);

    double loss_sum = 0;
    for (std::size_t b = 0, batch_no = 0; b < order.size(); b += bs, ++batch_no) {
      std::vector<Sample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + bs); ++i) {
        Rng aug = root.fork("augment").fork(e).fork(order[i]);
        batch.push_back(augment(data[order[i]], settings.augment, aug));
      }
      std::vector<const Sample*> ptrs;
      std::vector<const LabelMap*> masks;
      for (const Sample& s : batch) {
        ptrs.push_back(&s);
        masks.push_back(&s.mask);
      }
      Rng drop = root.fork("droppath").fork(e).fork(batch_no);
      const RunContext ctx{true, &drop, nullptr};
      const Tensor x = images_to_tensor(ptrs);
      const Tensor target = one_hot(masks, cfg.num_classes, cfg.input_h, cfg.input_w);
      const LossTerms loss = combined_loss(edunet_forward(x, cfg, ck.store, ctx), target, tc);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + " (global " + format_double(loss.global) +
                           ", local " + format_double(loss.local) + ", lr " + format_double(ck.lr) + ")");
      backward(loss.total);
      adam_step(ck.store, ck.adam, ck.lr, hyper);
      ck.store.zero_grad();
      loss_sum += value * static_cast<double>(batch.size());
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(data.size());
    row.val_loss = evaluation_loss(ck.store, settings, val);
    row.lr = ck.lr;
    if (!std::isfinite(row.val_loss))
      throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    result.log.push_back(row);

    ck.lr = ck.scheduler.step(row.val_loss, ck.lr);
    ck.epoch = epoch;
    if (row.val_loss < best_val) {
      best_val = row.val_loss;
      result.best = ck.clone();
    }
    if (on_epoch) on_epoch(row);
  }
  result.last = std::move(ck);
  return result;
}

FoldSplit split_fold(const std::vector<Sample>& dataset, const FoldSpec& folds, int fold) {
  if (fold < 0 || fold >= folds.k)
    throw std::invalid_argument("fold " + std::to_string(fold) + " out of range for k=" +
                                std::to_string(folds.k));
  FoldSplit s;
  for (const Sample& x : dataset) {
    const int f = folds.fold_of(x.id);
    if (folds.k == 1 || f != fold) s.train.push_back(x);
    if (f == fold) s.held_out.push_back(x);
  }
  if (s.held_out.empty()) throw DataError("fold " + std::to_string(fold) + " is empty");
  if (s.train.empty()) throw DataError("no training samples outside fold " + std::to_string(fold));
  return s;
}

CrossValResult cross_validate(const std::vector<Sample>& dataset, const FoldSpec& folds,
                              const RunSettings& settings, const std::string& dataset_name,
                              const std::function<void(int, const TrainLogRow&)>& on_epoch) {
  CrossValResult r;
  r.train_equals_eval = folds.k == 1;
  for (int k = 0; k < folds.k; ++k) {
    const FoldSplit split = split_fold(dataset, folds, k);
    TrainResult t = train(split.train, split.held_out, settings, [&](const TrainLogRow& row) {
      if (on_epoch) on_epoch(k, row);
    });
    EvalOptions opt;
    opt.pooled = settings.pooled_metrics;
    opt.dataset = dataset_name;
    opt.fold = k;
    r.folds.push_back(evaluate(t.best, split.held_out, opt));
    r.logs.push_back(std::move(t.log));
  }
  r.aggregate = aggregate_folds(r.folds);
  return r;
}

void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& log) {
  out << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : log)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
        << format_double(r.lr) << '\n';
}

}  // namespace edunet
