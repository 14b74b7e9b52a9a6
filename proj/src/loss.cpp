#include "edunet/loss.hpp"

#include <stdexcept>
#include <string>

#include "edunet/ops.hpp"

namespace edunet {

Tensor one_hot(const std::vector<const LabelMap*>& masks, int num_classes, std::int64_t height,
               std::int64_t width, DType dtype) {
  if (num_classes < 1) throw std::invalid_argument("one_hot: num_classes must be positive");
  const std::int64_t hw = height * width;
  const auto n = static_cast<std::int64_t>(masks.size());
  Tensor t = Tensor::zeros({n, num_classes, height, width}, dtype);
  Buffer& b = t.mutable_buffer();
  for (std::int64_t i = 0; i < n; ++i) {
    const LabelMap& m = *masks[static_cast<std::size_t>(i)];
    if (static_cast<std::int64_t>(m.size()) != hw)
      throw std::invalid_argument("one_hot: mask " + std::to_string(i) + " has " +
                                  std::to_string(m.size()) + " labels, expected " +
                                  std::to_string(hw));
    for (std::int64_t p = 0; p < hw; ++p) {
      const int c = m[static_cast<std::size_t>(p)];
      if (c >= num_classes)
        throw std::invalid_argument("one_hot: label " + std::to_string(c) + " out of range for " +
                                    std::to_string(num_classes) + " classes");
      b.set(static_cast<std::size_t>((i * num_classes + c) * hw + p), 1.0);
    }
  }
  return t;
}

Tensor dice_loss(const Tensor& logits, const Tensor& target, double smooth,
                 bool include_background) {
  if (logits.rank() != 4) throw ShapeError("dice_loss: logits must be (N,C,H,W)");
  if (target.shape() != logits.shape())
    throw ShapeError("dice_loss: target " + shape_str(target.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  const std::int64_t c = logits.dim(1);
  const std::int64_t first = include_background ? 0 : 1;
  if (first >= c) throw ShapeError("dice_loss: no classes selected");
  const Tensor t = target.dtype() == logits.dtype() ? target : target.to(logits.dtype());
  const Tensor p = softmax(logits, 1);
  const Tensor inter = sum(mul(p, t), {0, 2, 3});
  const Tensor denom = add(sum(p, {0, 2, 3}), sum(t, {0, 2, 3}));
  const Tensor d = div(add_scalar(mul_scalar(inter, 2.0), smooth), add_scalar(denom, smooth));
  return rsub_scalar(1.0, mean(slice(d, 0, first, c)));
}

LossTerms combined_loss(const EDUNetOutput& out, const Tensor& target, const TrainConfig& cfg) {
  LossTerms terms;
  auto accumulate = [&](const Tensor& logits, double weight, double& value) {
    if (!logits.defined()) return;
    Tensor l = dice_loss(logits, target, cfg.dice_smooth, cfg.include_background_in_loss);
    value = l.item();
    l = mul_scalar(l, weight);
    terms.total = terms.total.defined() ? add(terms.total, l) : l;
  };
  accumulate(out.logits_global, cfg.alpha, terms.global);
  accumulate(out.logits_local, cfg.beta, terms.local);
  if (!terms.total.defined()) throw std::invalid_argument("combined_loss: no branch outputs");
  return terms;
}

}  // namespace edunet
