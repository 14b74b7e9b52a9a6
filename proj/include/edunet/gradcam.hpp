#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "edunet/data.hpp"
#include "edunet/edunet.hpp"

namespace edunet {

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  ///< row-major, in [0,1]
};

/// Core Grad-CAM map for one image: channel weights are the spatial mean of `gradient`,
/// the map is ReLU(sum_k w_k A_k), min-max normalized (all zeros when flat) and bilinearly
/// resized to (out_h, out_w). activation and gradient: [1,K,h,w].
Heatmap grad_cam_map(const Tensor& activation, const Tensor& gradient, int out_h, int out_w);

/// Names of the activations that grad_cam accepts for this configuration.
std::vector<std::string> grad_cam_layers(ParamStore& store, const EDUNetConfig& cfg);

/// Grad-CAM of the summed foreground logits of the branch that owns `layer` (eval mode).
/// Throws std::invalid_argument for an unknown layer.
Heatmap grad_cam(ParamStore& store, const EDUNetConfig& cfg, const Sample& sample,
                 const std::string& layer);

void write_heatmap_png(const Heatmap& h, const std::filesystem::path& path);

}  // namespace edunet
