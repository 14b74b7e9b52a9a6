#include "edunet/pyramid.hpp"

#include <cmath>
#include <string>

#include "edunet/ops.hpp"

namespace edunet {

double unit_grid_step(DType dtype) {
  return dtype == DType::F32 ? std::ldexp(1.0, -24) : std::ldexp(1.0, -53);
}

Tensor snap_to_unit_grid(const Tensor& x) {
  const double inv = 1.0 / unit_grid_step(x.dtype());
  const double step = unit_grid_step(x.dtype());
  Tensor delta = Tensor::zeros(x.shape(), x.dtype());
  auto& d = delta.mutable_buffer();
  const auto& b = x.buffer();
  bool moved = false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double v = b.get(i);
    const double snapped = std::nearbyint(v * inv) * step;
    d.set(i, snapped - v);
    moved = moved || snapped != v;
  }
  return moved ? add(x, delta) : x;
}

std::vector<double> gaussian_kernel1d(double sigma, int ksize) {
  if (ksize < 1 || ksize % 2 == 0)
    throw std::invalid_argument("gaussian blur: kernel size must be odd, got " + std::to_string(ksize));
  if (!(sigma > 0)) throw std::invalid_argument("gaussian blur: sigma must be positive");
  std::vector<double> k(static_cast<std::size_t>(ksize));
  const int r = ksize / 2;
  double total = 0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= total;
  return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma, int ksize) {
  const auto taps = gaussian_kernel1d(sigma, ksize);
  if (image.rank() != 4) throw ShapeError("gaussian_blur: expected an (N,C,H,W) image");
  const std::int64_t c = image.dim(1);
  const int r = ksize / 2;
  if (r >= image.dim(2) || r >= image.dim(3))
    throw ShapeError("gaussian_blur: image smaller than the kernel radius");
  std::vector<double> row_w, col_w;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    row_w.insert(row_w.end(), taps.begin(), taps.end());
    col_w.insert(col_w.end(), taps.begin(), taps.end());
  }
  const Tensor kx = Tensor::from_vector({c, 1, 1, ksize}, row_w, image.dtype());
  const Tensor ky = Tensor::from_vector({c, 1, ksize, 1}, col_w, image.dtype());
  const int groups = static_cast<int>(c);
  Tensor h = conv2d(reflect_pad2d(image, r), kx, Tensor(), {1, 0, groups});
  return snap_to_unit_grid(conv2d(h, ky, Tensor(), {1, 0, groups}));
}

HighFreqPyramid build_pyramid(const Tensor& image, int num_levels, double sigma, int ksize) {
  if (num_levels < 1) throw std::invalid_argument("build_pyramid: num_levels must be >= 1");
  if (image.rank() != 4 || image.dim(1) != 1)
    throw ShapeError("build_pyramid: expected a single-channel (N,1,H,W) image");
  const std::int64_t need = std::int64_t{1} << (num_levels - 1);
  if (image.dim(2) < need || image.dim(3) < need)
    throw ShapeError("build_pyramid: image " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(3)) + " too small for " + std::to_string(num_levels) +
                     " levels");
  HighFreqPyramid p;
  p.blur_sigma = sigma;
  p.blur_kernel_size = ksize;
  p.levels.push_back(sub(image, gaussian_blur(image, sigma, ksize)));
  for (int i = 1; i < num_levels; ++i) p.levels.push_back(pool(p.levels.back(), PoolKind::Avg2x2));
  return p;
}

Tensor edge_attention(const Tensor& level, std::int64_t height, std::int64_t width) {
  if (level.rank() != 4 || level.dim(1) != 1)
    throw ShapeError("edge_attention: expected a single-channel level");
  if (level.dim(2) == height && level.dim(3) == width) return level;
  return interpolate_bilinear(level, height, width);
}

}  // namespace edunet
