#include "edunet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace edunet {

void TrainConfig::validate(const EDUNetConfig& model) const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(alpha >= 0) || !(beta >= 0)) fail("alpha and beta must be non-negative");
  const double active = (model.use_global ? alpha : 0.0) + (model.use_local ? beta : 0.0);
  if (!(active > 0)) fail("the enabled branches all have zero loss weight");
  if (!(lr > 0)) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (max_epochs < 0) fail("max_epochs must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    fail("adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must be in (0, 1)");
  if (plateau_patience < 0) fail("plateau_patience must be non-negative");
  if (!(plateau_min_lr >= 0)) fail("plateau_min_lr must be non-negative");
  if (!(plateau_threshold >= 0)) fail("plateau_threshold must be non-negative");
  if (!(dice_smooth >= 0)) fail("dice_smooth must be non-negative");
}

void adam_step(ParamStore& store, AdamState& state, double lr, const AdamHyper& hyper) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (auto& [name, p] : store.params()) {
    if (!p.has_grad()) continue;
    auto it = state.moments.find(name);
    if (it == state.moments.end())
      it = state.moments
               .emplace(name, AdamMoments{Tensor::zeros(p.shape(), p.dtype()),
                                          Tensor::zeros(p.shape(), p.dtype())})
               .first;
    AdamMoments& mv = it->second;
    if (mv.m.shape() != p.shape()) throw ShapeError("adam: moment shape mismatch for " + name);
    dispatch(p.dtype(), [&]<class T>() {
      auto w = p.mutable_data<T>();
      auto g = p.grad_buffer().span<T>();
      auto m = mv.m.mutable_data<T>();
      auto v = mv.v.mutable_data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
        const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps);
        w[i] = static_cast<T>(w[i] - update);
      }
    });
  }
}

PlateauScheduler PlateauScheduler::from(const TrainConfig& cfg) {
  PlateauScheduler s;
  s.factor = cfg.plateau_factor;
  s.patience = cfg.plateau_patience;
  s.min_lr = cfg.plateau_min_lr;
  s.threshold = cfg.plateau_threshold;
  return s;
}

double PlateauScheduler::step(double val_loss, double lr) {
  if (val_loss < best * (1.0 - threshold)) {
    best = val_loss;
    num_bad = 0;
    return lr;
  }
  if (++num_bad <= patience) return lr;
  num_bad = 0;
  return std::max(lr * factor, min_lr);
}

}  // namespace edunet
