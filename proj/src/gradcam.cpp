#include "edunet/gradcam.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "edunet/metrics.hpp"
#include "edunet/ops.hpp"

namespace edunet {

Heatmap grad_cam_map(const Tensor& activation, const Tensor& gradient, int out_h, int out_w) {
  if (activation.rank() != 4 || activation.dim(0) != 1)
    throw ShapeError("grad_cam: activation must be (1,K,h,w)");
  if (gradient.shape() != activation.shape()) throw ShapeError("grad_cam: gradient shape mismatch");
  const std::int64_t k = activation.dim(1), hw = activation.dim(2) * activation.dim(3);
  std::vector<double> cam(static_cast<std::size_t>(hw), 0.0);
  for (std::int64_t c = 0; c < k; ++c) {
    double w = 0;
    for (std::int64_t p = 0; p < hw; ++p) w += gradient.at(c * hw + p);
    w /= static_cast<double>(hw);
    for (std::int64_t p = 0; p < hw; ++p) cam[static_cast<std::size_t>(p)] += w * activation.at(c * hw + p);
  }
  for (double& v : cam) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(cam.begin(), cam.end());
  const double lo_v = *lo, range = *hi - *lo;
  for (double& v : cam) v = range > 0 ? (v - lo_v) / range : 0.0;

  const Tensor small = Tensor::from_vector({1, 1, activation.dim(2), activation.dim(3)}, cam, DType::F64);
  const Tensor big = interpolate_bilinear(small, out_h, out_w);
  Heatmap h;
  h.height = out_h;
  h.width = out_w;
  h.values.reserve(static_cast<std::size_t>(big.numel()));
  for (std::int64_t i = 0; i < big.numel(); ++i)
    h.values.push_back(static_cast<float>(std::clamp(big.at(i), 0.0, 1.0)));
  return h;
}

std::vector<std::string> grad_cam_layers(ParamStore& store, const EDUNetConfig& cfg) {
  InferenceGuard guard(store);
  std::map<std::string, Tensor> taps;
  RunContext ctx;
  ctx.taps = &taps;
  edunet_forward(Tensor::zeros({1, 1, cfg.input_h, cfg.input_w}), cfg, store, ctx);
  std::vector<std::string> names;
  for (const auto& [name, _] : taps) names.push_back(name);
  return names;
}

Heatmap grad_cam(ParamStore& store, const EDUNetConfig& cfg, const Sample& sample,
                 const std::string& layer) {
  const Sample s = fit_to_input({sample}, cfg).front();
  store.set_requires_grad(true);
  std::map<std::string, Tensor> taps;
  RunContext ctx;
  ctx.taps = &taps;
  const EDUNetOutput out = edunet_forward(images_to_tensor({&s}), cfg, store, ctx);
  const auto it = taps.find(layer);
  if (it == taps.end()) {
    std::string known;
    for (const auto& [name, _] : taps) known += (known.empty() ? "" : ", ") + name;
    throw std::invalid_argument("grad_cam: unknown layer '" + layer + "' (available: " + known + ")");
  }
  const Tensor& logits = layer.rfind("global.", 0) == 0 ? out.logits_global : out.logits_local;
  const Tensor score = sum(slice(logits, 1, 1, cfg.num_classes));
  backward(score);
  const Heatmap h = grad_cam_map(it->second, it->second.grad(), cfg.input_h, cfg.input_w);
  store.zero_grad();
  return h;
}

void write_heatmap_png(const Heatmap& h, const std::filesystem::path& path) {
  GrayPng png;
  png.width = h.width;
  png.height = h.height;
  for (float v : h.values) png.pixels.push_back(unit_to_byte(v));
  write_png_gray(path, png);
}

}  // namespace edunet
