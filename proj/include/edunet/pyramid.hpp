#pragma once

#include <vector>

#include "edunet/tensor.hpp"

namespace edunet {

/// High-frequency edge evidence. Level 0 is the difference of the image and its Gaussian
/// blur; level i is level i-1 average-pooled by 2 (ceil mode). Every level has one channel.
struct HighFreqPyramid {
  std::vector<Tensor> levels;
  double blur_sigma = 1.0;
  int blur_kernel_size = 5;
};

/// Intensities in [0,1] are kept on a fixed-point grid of 2^-24 (f32) or 2^-53 (f64). On that
/// grid every difference of two values is representable, so I - G(I) + G(I) == I exactly.
double unit_grid_step(DType dtype);
/// Rounds every value to the nearest grid point (ties to even). Values only move by at most
/// half a grid step; gradients pass through unchanged.
Tensor snap_to_unit_grid(const Tensor& x);

/// Normalized 1-D Gaussian taps, centered.
std::vector<double> gaussian_kernel1d(double sigma, int ksize);

/// Separable Gaussian blur with reflect borders, applied per channel. The result is snapped
/// to the unit grid.
Tensor gaussian_blur(const Tensor& image, double sigma = 1.0, int ksize = 5);

HighFreqPyramid build_pyramid(const Tensor& image, int num_levels, double sigma = 1.0,
                              int ksize = 5);

/// Bilinear resize of a pyramid level to an encoder feature resolution.
Tensor edge_attention(const Tensor& level, std::int64_t height, std::int64_t width);

}  // namespace edunet
