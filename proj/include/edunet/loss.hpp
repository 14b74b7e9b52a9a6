#pragma once

#include <cstdint>
#include <vector>

#include "edunet/edunet.hpp"
#include "edunet/optim.hpp"

namespace edunet {

using LabelMap = std::vector<std::uint8_t>;

/// [N,C,H,W] indicator tensor of row-major label maps. Throws std::invalid_argument for a
/// label >= C or a map of the wrong size.
Tensor one_hot(const std::vector<const LabelMap*>& masks, int num_classes, std::int64_t height,
               std::int64_t width, DType dtype = DType::F32);

/// Soft Dice on softmax(logits) against a one-hot target, pooled over batch and pixels:
/// d_c = (2 sum p_c t_c + smooth) / (sum p_c + sum t_c + smooth), loss = 1 - mean_c d_c over
/// the foreground classes (all classes when include_background).
Tensor dice_loss(const Tensor& logits, const Tensor& target, double smooth = 1.0,
                 bool include_background = false);

struct LossTerms {
  Tensor total;
  double global = 0.0;  ///< unweighted branch losses, 0 for a disabled branch
  double local = 0.0;
};

/// alpha * Dice(global) + beta * Dice(local) over the enabled branches.
LossTerms combined_loss(const EDUNetOutput& out, const Tensor& target, const TrainConfig& cfg);

}  // namespace edunet
