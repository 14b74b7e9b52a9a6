#include "edunet/edunet.hpp"

#include <algorithm>
#include <stdexcept>

namespace edunet {
namespace {

std::string idx(const char* base, std::size_t i) { return base + std::to_string(i); }

constexpr StageSpec kB0Stages[] = {
    {1, 3, 16, 1, 1}, {6, 3, 24, 2, 2},  {6, 5, 40, 2, 2}, {6, 3, 80, 3, 2},
    {6, 5, 112, 3, 1}, {6, 5, 192, 4, 2}, {6, 3, 320, 1, 1},
};

int global_out_channels(const EDUNetConfig& cfg, int level) {
  return cfg.global_channels[static_cast<std::size_t>(std::max(level, 0))];
}

double global_drop_prob(const EDUNetConfig& cfg, int block_index, int total_blocks) {
  if (total_blocks <= 1) return 0.0;
  return cfg.drop_path_max * block_index / (total_blocks - 1);
}

void check_image(const Tensor& image, int divisor, const char* where) {
  if (image.rank() != 4 || image.dim(1) != 1)
    throw ShapeError(std::string(where) + ": expected a single-channel (N,1,H,W) image");
  if (image.dim(2) % divisor != 0 || image.dim(3) % divisor != 0)
    throw ShapeError(std::string(where) + ": input " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(3)) + " is not divisible by " +
                     std::to_string(divisor));
}

}  // namespace

Profile parse_profile(std::string_view s) {
  if (s == "tiny") return Profile::Tiny;
  if (s == "b0") return Profile::B0;
  throw std::invalid_argument("unknown profile '" + std::string(s) + "' (expected tiny or b0)");
}

const char* profile_name(Profile p) { return p == Profile::Tiny ? "tiny" : "b0"; }

FgAttention parse_fg_attention(std::string_view s) {
  if (s == "mean") return FgAttention::Mean;
  if (s == "one_minus_bg") return FgAttention::OneMinusBg;
  throw std::invalid_argument("unknown fg attention mode '" + std::string(s) +
                              "' (expected mean or one_minus_bg)");
}

const char* fg_attention_name(FgAttention m) {
  return m == FgAttention::Mean ? "mean" : "one_minus_bg";
}

EDUNetConfig EDUNetConfig::tiny(int num_classes) {
  EDUNetConfig c;
  c.num_classes = num_classes;
  return c;
}

EDUNetConfig EDUNetConfig::b0(int num_classes) {
  EDUNetConfig c;
  c.num_classes = num_classes;
  c.profile = Profile::B0;
  c.input_h = c.input_w = 512;
  c.global_channels = {48, 96, 192, 384};
  c.lkec_blocks = {3, 3, 9, 3};
  c.drop_path_max = 0.1;
  return c;
}

void EDUNetConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (num_classes < 2 || num_classes > 255) fail("num_classes must be in [2, 255]");
  if (!use_global && !use_local) fail("at least one branch must be enabled");
  if (global_channels.empty()) fail("global_channels is empty");
  if (global_channels.size() != lkec_blocks.size())
    fail("global_channels and lkec_blocks differ in length");
  for (int c : global_channels)
    if (c < 1) fail("global channel counts must be positive");
  for (int b : lkec_blocks)
    if (b < 0) fail("lkec block counts must be non-negative");
  if (stem_stride != 2 && stem_stride != 4) fail("stem_stride must be 2 or 4");
  if (stem_kernel < stem_stride || (stem_kernel - stem_stride) % 2 != 0)
    fail("stem_kernel must be >= stem_stride with an even difference");
  if (drop_path_max < 0 || drop_path_max >= 1) fail("drop_path_max must be in [0, 1)");
  if (blur_kernel_size < 1 || blur_kernel_size % 2 == 0) fail("blur_kernel_size must be odd");
  if (!(blur_sigma > 0)) fail("blur_sigma must be positive");
  if (input_h < 1 || input_w < 1) fail("input size must be positive");
  const int d = required_divisor();
  if (input_h % d != 0 || input_w % d != 0)
    fail("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
         " must be divisible by " + std::to_string(d));
}

int EDUNetConfig::required_divisor() const {
  int d = 1;
  if (use_local) d = std::max(d, 1 << local_downsamplings());
  if (use_global) d = std::max(d, stem_stride << (num_global_stages() - 1));
  return d;
}

int EDUNetConfig::local_stem_channels() const { return profile == Profile::Tiny ? 8 : 32; }

int EDUNetConfig::local_decoder_min_channels() const { return 16; }

std::vector<StageSpec> EDUNetConfig::local_stages() const {
  std::vector<StageSpec> out(std::begin(kB0Stages), std::end(kB0Stages));
  if (profile == Profile::Tiny) {
    for (auto& st : out) {
      st.channels /= 4;
      st.repeats = 1;
    }
    // Four reductions keep 64x64 inputs workable (bottleneck at 4x4).
    out[5].stride = 1;
  }
  return out;
}

int EDUNetConfig::local_downsamplings() const {
  int n = 1;
  for (const auto& st : local_stages()) n += st.stride == 2;
  return n;
}

// ---------------------------------------------------------------------------------------------
// local branch

namespace {

void init_local(const Scope& s, const EDUNetConfig& cfg, Rng& rng) {
  const int stem = cfg.local_stem_channels();
  init_conv(s.sub("stem.conv"), stem, 1, 3, 3, false, rng);
  init_batch_norm(s.sub("stem.bn"), stem);
  int ch = stem;
  std::vector<int> skip_ch{stem};
  const auto stages = cfg.local_stages();
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const auto& st = stages[si];
    for (int r = 0; r < st.repeats; ++r) {
      BlockConfig b{ch, st.channels, st.kernel, st.expand_ratio, r == 0 ? st.stride : 1};
      init_mbconv(s.sub(idx("stage", si)).sub(idx("block", static_cast<std::size_t>(r))), b, rng);
      ch = st.channels;
    }
    if (st.stride == 2) skip_ch.push_back(ch);
    else skip_ch.back() = ch;
  }
  const int min_ch = cfg.local_decoder_min_channels();
  int in = skip_ch.back();
  std::size_t step = 0;
  for (std::size_t j = skip_ch.size() - 1; j-- > 0; ++step) {
    const int out = std::max(skip_ch[j], min_ch);
    const Scope d = s.sub(idx("dec", step));
    d.add_param("up.weight", kaiming_uniform({in, out, 2, 2}, out * 4, rng, DType::F32));
    init_batch_norm(d.sub("up_bn"), out);
    init_double_conv(d.sub("conv"), out + skip_ch[j], out, rng);
    in = out;
  }
  const Scope d = s.sub(idx("dec", step));
  d.add_param("up.weight", kaiming_uniform({in, min_ch, 2, 2}, min_ch * 4, rng, DType::F32));
  init_batch_norm(d.sub("up_bn"), min_ch);
  init_double_conv(d.sub("conv"), min_ch, min_ch, rng);
  init_conv(s.sub("head"), cfg.num_classes, min_ch, 1, 1, true, rng);
}

Tensor up_block(const Tensor& x, const Scope& d, const RunContext& ctx) {
  Tensor h = conv_transpose2d(x, d.param("up.weight"), Tensor(), 2, 0);
  return relu(bn(h, d.sub("up_bn"), ctx));
}

}  // namespace

LocalBranchOutput local_branch_forward(const Tensor& image, const EDUNetConfig& cfg,
                                       const Scope& s, const RunContext& ctx) {
  check_image(image, 1 << cfg.local_downsamplings(), "local branch");
  LocalBranchOutput out;
  Tensor h = conv_bn_act(image, s.sub("stem"), {2, 1, 1}, Activation::Swish, ctx);
  out.skips.push_back(h);
  int ch = cfg.local_stem_channels();
  const auto stages = cfg.local_stages();
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const auto& st = stages[si];
    for (int r = 0; r < st.repeats; ++r) {
      BlockConfig b{ch, st.channels, st.kernel, st.expand_ratio, r == 0 ? st.stride : 1};
      h = mbconv(h, b, s.sub(idx("stage", si)).sub(idx("block", static_cast<std::size_t>(r))), ctx);
      ch = st.channels;
    }
    if (st.stride == 2) out.skips.push_back(h);
    else out.skips.back() = h;
  }
  for (std::size_t i = 0; i < out.skips.size(); ++i) ctx.tap(idx("local.enc.", i), out.skips[i]);

  Tensor d = out.skips.back();
  std::size_t step = 0;
  for (std::size_t j = out.skips.size() - 1; j-- > 0; ++step) {
    const Scope ds = s.sub(idx("dec", step));
    d = double_conv(concat({up_block(d, ds, ctx), out.skips[j]}, 1), ds.sub("conv"), ctx);
    ctx.tap(idx("local.dec.", step), d);
  }
  const Scope ds = s.sub(idx("dec", step));
  d = double_conv(up_block(d, ds, ctx), ds.sub("conv"), ctx);
  ctx.tap(idx("local.dec.", step), d);
  out.logits = conv(d, s.sub("head"));
  return out;
}

// ---------------------------------------------------------------------------------------------
// global branch

namespace {

void init_global(const Scope& s, const EDUNetConfig& cfg, Rng& rng) {
  const int stages = cfg.num_global_stages();
  init_conv(s.sub("stem.conv"), cfg.global_channels[0], 1, cfg.stem_kernel, cfg.stem_kernel, true,
            rng);
  init_layer_norm(s.sub("stem.norm"), cfg.global_channels[0]);
  for (int i = 0; i < stages; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int c = cfg.global_channels[ui];
    if (i > 0) {
      init_layer_norm(s.sub(idx("down", ui)).sub("norm"), cfg.global_channels[ui - 1]);
      init_conv(s.sub(idx("down", ui)).sub("conv"), c, cfg.global_channels[ui - 1], 2, 2, true, rng);
    }
    for (int b = 0; b < cfg.lkec_blocks[ui]; ++b)
      init_lkec(s.sub(idx("stage", ui)).sub(idx("block", static_cast<std::size_t>(b))), c,
                cfg.layer_scale_init, rng);
  }
  for (int k = stages - 1; k >= 0; --k) {
    const auto uk = static_cast<std::size_t>(k);
    const int nk = cfg.global_channels[uk];
    if (cfg.use_mcega) {
      init_coarse_head(s.sub(idx("coarse", uk)), nk, cfg.num_classes, rng);
      init_mc_ega(s.sub(idx("mcega", uk)), nk, rng);
    }
    const int next = global_out_channels(cfg, k - 1);
    init_conv(s.sub(idx("dec", uk)).sub("conv"), next, 2 * nk, 3, 3, false, rng);
    init_batch_norm(s.sub(idx("dec", uk)).sub("bn"), next);
  }
  init_conv(s.sub("head"), cfg.num_classes, cfg.global_channels[0], 1, 1, true, rng);
}

}  // namespace

std::vector<Tensor> global_encoder_forward(const Tensor& image, const EDUNetConfig& cfg,
                                           const Scope& s, const RunContext& ctx) {
  check_image(image, cfg.stem_stride << (cfg.num_global_stages() - 1), "global encoder");
  std::vector<Tensor> features;
  Tensor h = conv(image, s.sub("stem.conv"),
                  {cfg.stem_stride, (cfg.stem_kernel - cfg.stem_stride) / 2, 1});
  h = ln(h, s.sub("stem.norm"));
  int total = 0;
  for (int b : cfg.lkec_blocks) total += b;
  int block_index = 0;
  for (int i = 0; i < cfg.num_global_stages(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (i > 0) {
      h = ln(h, s.sub(idx("down", ui)).sub("norm"));
      h = conv(h, s.sub(idx("down", ui)).sub("conv"), {2, 0, 1});
    }
    for (int b = 0; b < cfg.lkec_blocks[ui]; ++b, ++block_index)
      h = lkec_block(h, s.sub(idx("stage", ui)).sub(idx("block", static_cast<std::size_t>(b))),
                     global_drop_prob(cfg, block_index, total), ctx);
    ctx.tap(idx("global.enc.", ui), h);
    features.push_back(h);
  }
  return features;
}

void init_coarse_head(const Scope& s, int in_channels, int num_classes, Rng& rng) {
  const int hidden = std::max(in_channels / 4, num_classes);
  init_conv(s.sub("conv1"), hidden, in_channels, 3, 3, true, rng);
  init_conv(s.sub("conv2"), num_classes, hidden, 1, 1, true, rng);
}

Tensor coarse_head(const Tensor& feature, const Scope& s) {
  return conv(gelu(conv(feature, s.sub("conv1"), {1, 1, 1})), s.sub("conv2"));
}

ClassAttention class_attention(const Tensor& coarse_logits, std::int64_t h, std::int64_t w,
                               FgAttention mode) {
  const std::int64_t c = coarse_logits.dim(1);
  if (c < 2) throw ShapeError("class_attention: need at least 2 classes");
  Tensor logits = coarse_logits;
  if (logits.dim(2) != h || logits.dim(3) != w) logits = interpolate_bilinear(logits, h, w);
  Tensor p = softmax(logits, 1);
  ClassAttention a;
  a.background = slice(p, 1, 0, 1);
  a.foreground = mode == FgAttention::Mean ? mean(slice(p, 1, 1, c), {1}, true)
                                           : rsub_scalar(1.0, a.background);
  return a;
}

void init_mc_ega(const Scope& s, int channels, Rng& rng) {
  init_conv(s.sub("gate"), channels, 3 * channels, 3, 3, true, rng);
  init_conv(s.sub("value"), channels, 3 * channels, 1, 1, true, rng);
  init_cbam(s.sub("cbam"), channels, rng);
}

Tensor mc_ega(const MCEGAInputs& in, const Scope& s, int num_classes, FgAttention mode) {
  const Tensor& f = in.encoder_feature;
  if (in.coarse_logits.rank() != 4 || in.coarse_logits.dim(1) != num_classes)
    throw ShapeError("mc_ega: coarse logits must have " + std::to_string(num_classes) +
                     " channels");
  if (in.coarse_logits.dim(0) != f.dim(0) || in.high_freq.dim(0) != f.dim(0))
    throw ShapeError("mc_ega: batch mismatch");
  const std::int64_t h = f.dim(2), w = f.dim(3);
  const ClassAttention a = class_attention(in.coarse_logits, h, w, mode);
  const Tensor edge = edge_attention(in.high_freq, h, w);
  const Tensor x = concat({mul(f, a.background), mul(f, a.foreground), mul(f, edge)}, 1);
  const Tensor g = mul(sigmoid(conv(x, s.sub("gate"), {1, 1, 1})), conv(x, s.sub("value")));
  return cbam(add(f, g), s.sub("cbam"));
}

Tensor global_decoder_forward(const std::vector<Tensor>& features, const HighFreqPyramid& pyramid,
                              const EDUNetConfig& cfg, const Scope& s, const RunContext& ctx) {
  const int stages = cfg.num_global_stages();
  if (static_cast<int>(features.size()) != stages)
    throw ShapeError("global decoder: expected " + std::to_string(stages) + " features");
  if (static_cast<int>(pyramid.levels.size()) != stages)
    throw ShapeError("global decoder: pyramid has " + std::to_string(pyramid.levels.size()) +
                     " levels but the encoder has " + std::to_string(stages) + " stages");
  Tensor d = features.back();
  Tensor logits;
  if (cfg.use_mcega) logits = coarse_head(d, s.sub(idx("coarse", static_cast<std::size_t>(stages - 1))));
  for (int k = stages - 1; k >= 0; --k) {
    const auto uk = static_cast<std::size_t>(k);
    const Tensor& f = features[uk];
    Tensor a = f;
    if (cfg.use_mcega) {
      a = mc_ega({f, pyramid.levels[uk], logits}, s.sub(idx("mcega", uk)), cfg.num_classes,
                 cfg.fg_attention);
      ctx.tap(idx("global.mcega.", uk), a);
    }
    Tensor x = concat({d, a}, 1);
    ctx.tap(idx("global.fuse.", uk), x);
    x = interpolate_bilinear(x, 2 * f.dim(2), 2 * f.dim(3));
    const Scope ds = s.sub(idx("dec", uk));
    d = gelu(bn(conv(x, ds.sub("conv"), {1, 1, 1}), ds.sub("bn"), ctx));
    ctx.tap(idx("global.dec.", uk), d);
    if (cfg.use_mcega && k > 0) logits = coarse_head(d, s.sub(idx("coarse", uk - 1)));
  }
  const std::int64_t out_h = pyramid.levels[0].dim(2), out_w = pyramid.levels[0].dim(3);
  if (d.dim(2) != out_h || d.dim(3) != out_w) d = interpolate_bilinear(d, out_h, out_w);
  return conv(d, s.sub("head"));
}

// ---------------------------------------------------------------------------------------------

void init_edunet(ParamStore& store, const EDUNetConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.use_global) {
    Rng r = rng.fork("global");
    init_global(Scope(store, "global"), cfg, r);
  }
  if (cfg.use_local) {
    Rng r = rng.fork("local");
    init_local(Scope(store, "local"), cfg, r);
  }
}

Tensor fuse_probabilities(const std::vector<Tensor>& logits) {
  if (logits.empty()) throw std::invalid_argument("fuse_probabilities: no branches");
  Tensor acc = softmax(logits[0], 1);
  for (std::size_t i = 1; i < logits.size(); ++i) acc = add(acc, softmax(logits[i], 1));
  return logits.size() == 1 ? acc : mul_scalar(acc, 1.0 / static_cast<double>(logits.size()));
}

EDUNetOutput edunet_forward(const Tensor& image, const EDUNetConfig& cfg, ParamStore& store,
                            const RunContext& ctx) {
  if (!cfg.use_global && !cfg.use_local)
    throw std::invalid_argument("edunet: both branches are disabled");
  check_image(image, cfg.required_divisor(), "edunet");
  EDUNetOutput out;
  std::vector<Tensor> branch_logits;
  if (cfg.use_global) {
    const Scope g(store, "global");
    const HighFreqPyramid pyramid =
        build_pyramid(image, cfg.num_global_stages(), cfg.blur_sigma, cfg.blur_kernel_size);
    const auto features = global_encoder_forward(image, cfg, g, ctx);
    out.logits_global = global_decoder_forward(features, pyramid, cfg, g, ctx);
    branch_logits.push_back(out.logits_global);
  }
  if (cfg.use_local) {
    out.logits_local = local_branch_forward(image, cfg, Scope(store, "local"), ctx).logits;
    branch_logits.push_back(out.logits_local);
  }
  out.fused_prob = fuse_probabilities(branch_logits);
  return out;
}

std::vector<std::vector<std::uint8_t>> argmax_masks(const Tensor& prob) {
  if (prob.rank() != 4) throw ShapeError("argmax_masks: expected (N,C,H,W)");
  const std::int64_t n = prob.dim(0), c = prob.dim(1), hw = prob.dim(2) * prob.dim(3);
  std::vector<std::vector<std::uint8_t>> out(static_cast<std::size_t>(n));
  const auto& b = prob.buffer();
  for (std::int64_t i = 0; i < n; ++i) {
    auto& m = out[static_cast<std::size_t>(i)];
    m.resize(static_cast<std::size_t>(hw));
    for (std::int64_t p = 0; p < hw; ++p) {
      std::int64_t best = 0;
      double best_v = b.get(static_cast<std::size_t>((i * c) * hw + p));
      for (std::int64_t k = 1; k < c; ++k) {
        const double v = b.get(static_cast<std::size_t>((i * c + k) * hw + p));
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      m[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace edunet
