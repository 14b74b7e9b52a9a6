#include "edunet/blocks.hpp"

#include <cmath>

namespace edunet {

void BlockConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("BlockConfig: channels < 1");
  if (kernel != 3 && kernel != 5 && kernel != 7)
    throw std::invalid_argument("BlockConfig: kernel must be 3, 5 or 7");
  if (expand_ratio < 1) throw std::invalid_argument("BlockConfig: expand_ratio < 1");
  if (stride != 1 && stride != 2) throw std::invalid_argument("BlockConfig: stride must be 1 or 2");
  if (drop_path_prob < 0 || drop_path_prob >= 1)
    throw std::invalid_argument("BlockConfig: drop_path_prob outside [0,1)");
  if (se_ratio <= 0) throw std::invalid_argument("BlockConfig: se_ratio must be positive");
}

void init_conv(const Scope& s, int cout, int cin_per_group, int kh, int kw, bool bias, Rng& rng) {
  const std::int64_t fan_in = static_cast<std::int64_t>(cin_per_group) * kh * kw;
  s.add_param("weight", kaiming_uniform({cout, cin_per_group, kh, kw}, fan_in, rng, DType::F32));
  if (bias) s.add_param("bias", Tensor::zeros({cout}));
}

void init_batch_norm(const Scope& s, int channels) {
  s.add_param("weight", Tensor::ones({channels}));
  s.add_param("bias", Tensor::zeros({channels}));
  s.add_buffer("running_mean", Tensor::zeros({channels}));
  s.add_buffer("running_var", Tensor::ones({channels}));
}

void init_layer_norm(const Scope& s, int channels) {
  s.add_param("weight", Tensor::ones({channels}));
  s.add_param("bias", Tensor::zeros({channels}));
}

void init_linear(const Scope& s, int cout, int cin, Rng& rng) {
  s.add_param("weight", kaiming_uniform({cout, cin}, cin, rng, DType::F32));
  s.add_param("bias", Tensor::zeros({cout}));
}

namespace {

// Zero padding per side; a negative amount trims rows or columns instead.
Tensor pad_or_trim(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                   std::int64_t right) {
  Tensor h = x;
  auto along = [&](int axis, std::int64_t before, std::int64_t after) {
    if (before < 0) h = slice(h, axis, -before, h.dim(axis));
    if (after < 0) h = slice(h, axis, 0, h.dim(axis) + after);
    std::vector<Tensor> parts;
    auto zeros = [&](std::int64_t n) {
      Shape sh = h.shape();
      sh[static_cast<std::size_t>(axis)] = n;
      return Tensor::zeros(sh, h.dtype());
    };
    if (before > 0) parts.push_back(zeros(before));
    parts.push_back(h);
    if (after > 0) parts.push_back(zeros(after));
    if (parts.size() > 1) h = concat(parts, axis);
  };
  along(2, top, bottom);
  along(3, left, right);
  return h;
}

}  // namespace

Tensor conv_floor(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  if (x.rank() != 4 || w.rank() != 4) return conv2d(x, w, bias, opt);
  const std::int64_t eh = x.dim(2) + 2 * opt.padding - w.dim(2);
  const std::int64_t ew = x.dim(3) + 2 * opt.padding - w.dim(3);
  if (eh < 0 || ew < 0 || (eh % opt.stride == 0 && ew % opt.stride == 0))
    return conv2d(x, w, bias, opt);
  const std::int64_t p = opt.padding;
  Tensor padded = pad_or_trim(x, p, p - eh % opt.stride, p, p - ew % opt.stride);
  opt.padding = 0;
  return conv2d(padded, w, bias, opt);
}

Tensor conv(const Tensor& x, const Scope& s, Conv2dOptions opt) {
  return conv_floor(x, s.param("weight"), s.has_param("bias") ? s.param("bias") : Tensor(), opt);
}

Tensor bn(const Tensor& x, const Scope& s, const RunContext& ctx) {
  return batch_norm(x, s.param("weight"), s.param("bias"), s.buffer("running_mean"),
                    s.buffer("running_var"), ctx.training);
}

Tensor ln(const Tensor& x, const Scope& s) {
  return layer_norm(x, s.param("weight"), s.param("bias"));
}

Tensor conv_bn_act(const Tensor& x, const Scope& s, Conv2dOptions opt, Activation act,
                   const RunContext& ctx) {
  return activation(bn(conv(x, s.sub("conv"), opt), s.sub("bn"), ctx), act);
}

int se_reduced_channels(int channels, double ratio) {
  return std::max(1, static_cast<int>(std::lround(channels * ratio)));
}

void init_se(const Scope& s, int channels, int reduced, Rng& rng) {
  init_linear(s.sub("fc1"), reduced, channels, rng);
  init_linear(s.sub("fc2"), channels, reduced, rng);
}

Tensor se_block(const Tensor& x, const Scope& s) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const Tensor& w1 = s.param("fc1.weight");
  if (w1.dim(1) != c)
    throw ShapeError("se_block: input has " + std::to_string(c) + " channels, parameters expect " +
                     std::to_string(w1.dim(1)));
  Tensor squeezed = reshape(pool(x, PoolKind::GlobalAvg), {n, c});
  Tensor h = swish(linear(squeezed, w1, s.param("fc1.bias")));
  Tensor gate = sigmoid(linear(h, s.param("fc2.weight"), s.param("fc2.bias")));
  return mul(x, reshape(gate, {n, c, 1, 1}));
}

void init_mbconv(const Scope& s, const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const int mid = cfg.expanded_channels();
  if (cfg.expand_ratio != 1) {
    init_conv(s.sub("expand.conv"), mid, cfg.in_channels, 1, 1, false, rng);
    init_batch_norm(s.sub("expand.bn"), mid);
  }
  init_conv(s.sub("dw.conv"), mid, 1, cfg.kernel, cfg.kernel, false, rng);
  init_batch_norm(s.sub("dw.bn"), mid);
  init_se(s.sub("se"), mid, se_reduced_channels(cfg.in_channels, cfg.se_ratio), rng);
  init_conv(s.sub("project.conv"), cfg.out_channels, mid, 1, 1, false, rng);
  init_batch_norm(s.sub("project.bn"), cfg.out_channels);
}

Tensor mbconv(const Tensor& x, const BlockConfig& cfg, const Scope& s, const RunContext& ctx) {
  if (x.dim(1) != cfg.in_channels)
    throw ShapeError("mbconv: input channels " + std::to_string(x.dim(1)) + " != config " +
                     std::to_string(cfg.in_channels));
  const bool has_expand = s.has_param("expand.conv.weight");
  if (has_expand != (cfg.expand_ratio != 1))
    throw std::invalid_argument("mbconv: expand parameters inconsistent with expand_ratio");
  const int mid = cfg.expanded_channels();
  Tensor h = x;
  if (has_expand) h = conv_bn_act(h, s.sub("expand"), {}, Activation::Swish, ctx);
  h = conv_bn_act(h, s.sub("dw"), {cfg.stride, cfg.kernel / 2, mid}, Activation::Swish, ctx);
  h = se_block(h, s.sub("se"));
  h = bn(conv(h, s.sub("project.conv")), s.sub("project.bn"), ctx);
  if (cfg.has_residual()) h = add(x, drop_path(h, cfg.drop_path_prob, ctx.training, ctx.rng));
  return h;
}

void init_lkec(const Scope& s, int channels, double layer_scale_init, Rng& rng) {
  init_conv(s.sub("dw"), channels, 1, 7, 7, true, rng);
  init_layer_norm(s.sub("norm"), channels);
  init_conv(s.sub("pw1"), 4 * channels, channels, 1, 1, true, rng);
  init_conv(s.sub("pw2"), channels, 4 * channels, 1, 1, true, rng);
  s.add_param("layer_scale", Tensor::full({channels}, layer_scale_init));
}

Tensor lkec_block(const Tensor& x, const Scope& s, double drop_path_prob, const RunContext& ctx) {
  const std::int64_t c = x.dim(1);
  if (s.param("dw.weight").dim(0) != c)
    throw ShapeError("lkec_block: channel mismatch (" + std::to_string(c) + " vs " +
                     std::to_string(s.param("dw.weight").dim(0)) + ")");
  Tensor h = conv(x, s.sub("dw"), {1, 3, static_cast<int>(c)});
  h = ln(h, s.sub("norm"));
  h = gelu(conv(h, s.sub("pw1")));
  h = conv(h, s.sub("pw2"));
  h = mul(h, reshape(s.param("layer_scale"), {1, c, 1, 1}));
  return add(x, drop_path(h, drop_path_prob, ctx.training, ctx.rng));
}

void init_cbam(const Scope& s, int channels, Rng& rng, int reduction, int kernel) {
  const int hidden = std::max(1, channels / reduction);
  init_linear(s.sub("mlp.fc1"), hidden, channels, rng);
  init_linear(s.sub("mlp.fc2"), channels, hidden, rng);
  init_conv(s.sub("spatial"), 1, 2, kernel, kernel, true, rng);
}

Tensor cbam(const Tensor& x, const Scope& s) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (s.param("mlp.fc1.weight").dim(1) != c)
    throw ShapeError("cbam: input has " + std::to_string(c) + " channels, parameters expect " +
                     std::to_string(s.param("mlp.fc1.weight").dim(1)));
  auto mlp = [&](const Tensor& v) {
    Tensor h = relu(linear(v, s.param("mlp.fc1.weight"), s.param("mlp.fc1.bias")));
    return linear(h, s.param("mlp.fc2.weight"), s.param("mlp.fc2.bias"));
  };
  Tensor avg = reshape(pool(x, PoolKind::GlobalAvg), {n, c});
  Tensor mx = reshape(pool(x, PoolKind::GlobalMax), {n, c});
  Tensor channel_gate = sigmoid(add(mlp(avg), mlp(mx)));
  Tensor x1 = mul(x, reshape(channel_gate, {n, c, 1, 1}));
  Tensor desc = concat({channel_reduce(x1, ChannelReduce::Mean), channel_reduce(x1, ChannelReduce::Max)}, 1);
  const int k = static_cast<int>(s.param("spatial.weight").dim(2));
  Tensor spatial_gate = sigmoid(conv(desc, s.sub("spatial"), {1, k / 2, 1}));
  return mul(x1, spatial_gate);
}

void init_double_conv(const Scope& s, int cin, int cout, Rng& rng) {
  init_conv(s.sub("conv1.conv"), cout, cin, 3, 3, false, rng);
  init_batch_norm(s.sub("conv1.bn"), cout);
  init_conv(s.sub("conv2.conv"), cout, cout, 3, 3, false, rng);
  init_batch_norm(s.sub("conv2.bn"), cout);
}

Tensor double_conv(const Tensor& x, const Scope& s, const RunContext& ctx) {
  Tensor h = conv_bn_act(x, s.sub("conv1"), {1, 1, 1}, Activation::ReLU, ctx);
  return conv_bn_act(h, s.sub("conv2"), {1, 1, 1}, Activation::ReLU, ctx);
}

Tensor drop_path(const Tensor& x, double prob, bool training, Rng* rng) {
  if (!training || prob <= 0.0) return x;
  if (prob > 1.0) throw std::invalid_argument("drop_path: prob > 1");
  const std::int64_t n = x.dim(0);
  Shape mask_shape(static_cast<std::size_t>(x.rank()), 1);
  mask_shape[0] = n;
  Tensor mask = Tensor::zeros(mask_shape, x.dtype());
  if (prob < 1.0) {
    if (!rng) throw std::invalid_argument("drop_path: training with prob > 0 needs an rng");
    auto& b = mask.mutable_buffer();
    for (std::int64_t i = 0; i < n; ++i)
      b.set(static_cast<std::size_t>(i), rng->bernoulli(1.0 - prob) ? 1.0 / (1.0 - prob) : 0.0);
  }
  return mul(x, mask);
}

}  // namespace edunet
