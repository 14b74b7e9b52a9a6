#include "edunet/gradcheck_suite.hpp"

#include <chrono>
#include <set>
#include <stdexcept>

#include "edunet/blocks.hpp"
#include "edunet/edunet.hpp"
#include "edunet/loss.hpp"
#include "edunet/ops.hpp"
#include "edunet/param_store.hpp"
#include "edunet/pyramid.hpp"

namespace edunet {

namespace {

Tensor random(const Shape& shape, Rng& rng, DType dt, double lo = -1.5, double hi = 1.5) {
  Tensor t = Tensor::zeros(shape, dt);
  auto& b = t.mutable_buffer();
  for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng.uniform(lo, hi));
  return t;
}

// Magnitudes in [0.1, 1] with random sign, keeping kinks away from the stencil.
Tensor random_signed(const Shape& shape, Rng& rng, DType dt) {
  Tensor t = Tensor::zeros(shape, dt);
  auto& b = t.mutable_buffer();
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double v = rng.uniform(0.1, 1.0);
    b.set(i, rng.bernoulli(0.5) ? v : -v);
  }
  return t;
}

GradCheckCase op(std::string name, std::vector<Shape> shapes, LeafFn fn, bool signed_inputs = false) {
  return {name, true, [shapes, fn, signed_inputs](DType dt, Rng& rng) {
            std::vector<Tensor> inputs;
            for (const auto& s : shapes)
              inputs.push_back(signed_inputs ? random_signed(s, rng, dt) : random(s, rng, dt));
            return grad_check(fn, inputs);
          }};
}

using BlockInit = std::function<void(const Scope&, Rng&)>;
using BlockFwd = std::function<Tensor(const Tensor&, const Scope&)>;

// Checks a block over its input and all of its (randomized) parameters.
GradCheckCase block(std::string name, Shape input, BlockInit init, BlockFwd fwd,
                    std::int64_t max_coords = 60) {
  return {name, true, [input, init, fwd, max_coords](DType dt, Rng& rng) {
            ParamStore proto;
            init(Scope(proto, ""), rng);
            for (auto& [_, t] : proto.params()) {
              auto& b = t.mutable_buffer();
              for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng.uniform(-0.5, 0.5));
            }
            const ParamStore p = proto.to(dt);
            std::vector<Tensor> leaves{random(input, rng, dt, -1, 1)};
            GradCheckOptions opt;
            opt.names.push_back("x");
            for (const auto& [n, t] : p.params()) {
              leaves.push_back(t);
              opt.names.push_back(n);
            }
            opt.max_coords = max_coords;
            opt.seed = rng.next_u64();
            return grad_check(
                [&](const std::vector<Tensor>& l) {
                  ParamStore s = rebind_params(p, l, 1);
                  return fwd(l[0], Scope(s, ""));
                },
                leaves, opt);
          }};
}

// y = 3x whose backward claims dy/dx = 2.
Tensor broken_scale(const Tensor& in) {
  auto impl = in.impl();
  Buffer data = in.buffer();
  for (std::size_t i = 0; i < data.size(); ++i) data.set(i, 3 * data.get(i));
  return make_result(in.shape(), std::move(data), {in}, "broken", [impl](const Buffer& g, const Buffer&) {
    Buffer gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx.set(i, 2 * g.get(i));
    accumulate_grad(*impl, gx);
  });
}

GradCheckReport full_model(DType dt, Rng& rng) {
  EDUNetConfig cfg = EDUNetConfig::tiny(3);
  cfg.input_h = cfg.input_w = 16;
  ParamStore proto;
  init_edunet(proto, cfg, rng);
  // Unit-order layer scales so the large-kernel branches carry real signal. Zero-initialized
  // biases would park dead ReLU regions exactly on the kink, so they are jittered too.
  const auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& [name, t] : proto.params()) {
    auto& b = t.mutable_buffer();
    if (ends_with(name, "layer_scale"))
      for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng.uniform(0.5, 1.0));
    else if (ends_with(name, "bias"))
      for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng.uniform(-0.3, 0.3));
  }
  // Fresh running statistics leave eval-mode BN unnormalized and the deep local gradients
  // near the finite-difference noise floor; settle them on a small random batch first.
  {
    EDUNetConfig calib = cfg;
    calib.drop_path_max = 0.0;
    const Tensor batch = random({4, 1, 16, 16}, rng, DType::F32, 0.0, 1.0);
    const InferenceGuard guard(proto);
    for (int i = 0; i < 60; ++i) edunet_forward(batch, calib, proto, RunContext{true, nullptr, nullptr});
  }
  const ParamStore p = proto.to(dt);
  std::vector<Tensor> leaves{random({1, 1, 16, 16}, rng, dt, 0.0, 1.0)};
  GradCheckOptions opt;
  opt.names.push_back("image");
  for (const auto& [n, t] : p.params()) {
    leaves.push_back(t);
    opt.names.push_back(n);
  }
  opt.max_coords = 4;
  opt.seed = rng.next_u64();
  return grad_check(
      [&](const std::vector<Tensor>& l) {
        ParamStore s = rebind_params(p, l, 1);
        const EDUNetOutput o = edunet_forward(l[0], cfg, s, RunContext{});
        return concat({o.logits_global, o.logits_local, o.fused_prob}, 1);
      },
      leaves, opt);
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases(bool include_broken_rule) {
  const RunContext train_ctx{true, nullptr, nullptr};
  std::vector<GradCheckCase> c = {
      op("add", {{2, 3, 1, 4}, {1, 3, 2, 1}}, [](auto& l) { return add(l[0], l[1]); }),
      op("sub", {{2, 3}, {3}}, [](auto& l) { return sub(l[0], l[1]); }),
      op("mul", {{2, 3, 2, 2}, {2, 3, 1, 1}}, [](auto& l) { return mul(l[0], l[1]); }),
      op("div", {{2, 3}, {2, 3}}, [](auto& l) { return div(l[0], add_scalar(mul(l[1], l[1]), 0.5)); }),
      op("scalar_ops", {{2, 3}}, [](auto& l) { return rsub_scalar(0.5, mul_scalar(add_scalar(l[0], 2.0), -1.5)); }),
      op("sum", {{2, 3, 4}}, [](auto& l) { return sum(l[0]); }),
      op("sum_axes", {{2, 3, 4}}, [](auto& l) { return sum(l[0], {0, 2}, true); }),
      op("mean", {{2, 3, 4}}, [](auto& l) { return mean(l[0]); }),
      op("mean_axes", {{2, 3, 4}}, [](auto& l) { return mean(l[0], {1}); }),
      op("reshape", {{2, 6}}, [](auto& l) { return reshape(l[0], {3, 4}); }),
      op("concat_slice", {{2, 2, 3, 3}, {2, 3, 3, 3}}, [](auto& l) { return slice(concat({l[0], l[1]}, 1), 1, 1, 4); }),
      op("relu", {{2, 3, 2, 2}}, [](auto& l) { return relu(l[0]); }, true),
      op("gelu", {{2, 3, 2, 2}}, [](auto& l) { return gelu(l[0]); }),
      op("swish", {{2, 3, 2, 2}}, [](auto& l) { return swish(l[0]); }),
      op("sigmoid", {{2, 3, 2, 2}}, [](auto& l) { return sigmoid(l[0]); }),
      op("softmax", {{2, 4, 2, 3}}, [](auto& l) { return softmax(l[0], 1); }),
      op("conv2d", {{2, 3, 5, 5}, {4, 3, 3, 3}, {4}}, [](auto& l) { return conv2d(l[0], l[1], l[2], {1, 1, 1}); }),
      op("conv2d_strided", {{1, 2, 7, 7}, {3, 2, 3, 3}}, [](auto& l) { return conv2d(l[0], l[1], Tensor(), {2, 1, 1}); }),
      op("conv2d_grouped", {{2, 4, 5, 5}, {6, 2, 3, 3}, {6}}, [](auto& l) { return conv2d(l[0], l[1], l[2], {2, 1, 2}); }),
      op("conv2d_depthwise", {{1, 3, 6, 6}, {3, 1, 5, 5}}, [](auto& l) { return conv2d(l[0], l[1], Tensor(), {1, 2, 3}); }),
      op("conv_floor", {{1, 2, 6, 6}, {2, 1, 3, 3}}, [](auto& l) { return conv_floor(l[0], l[1], Tensor(), {2, 1, 2}); }),
      op("conv_transpose2d", {{2, 3, 3, 2}, {3, 2, 2, 2}, {2}}, [](auto& l) { return conv_transpose2d(l[0], l[1], l[2], 2); }),
      op("interpolate_up", {{1, 2, 3, 4}}, [](auto& l) { return interpolate_bilinear(l[0], 6, 5); }),
      op("interpolate_down", {{1, 2, 6, 5}}, [](auto& l) { return interpolate_bilinear(l[0], 3, 2); }),
      op("reflect_pad", {{1, 2, 4, 3}}, [](auto& l) { return reflect_pad2d(l[0], 2); }),
      op("batch_norm_train", {{3, 2, 2, 3}, {2}, {2}},
         [](auto& l) {
           return batch_norm(l[0], l[1], l[2], Tensor::zeros({2}, l[0].dtype()), Tensor::ones({2}, l[0].dtype()), true);
         }),
      op("batch_norm_eval", {{2, 2, 2, 2}, {2}, {2}},
         [](auto& l) {
           return batch_norm(l[0], l[1], l[2], Tensor::full({2}, 0.1, l[0].dtype()),
                             Tensor::full({2}, 1.7, l[0].dtype()), false);
         }),
      op("layer_norm", {{2, 4, 2, 3}, {4}, {4}}, [](auto& l) { return layer_norm(l[0], l[1], l[2]); }),
      op("global_avg_pool", {{2, 3, 4, 5}}, [](auto& l) { return pool(l[0], PoolKind::GlobalAvg); }),
      op("global_max_pool", {{2, 3, 4, 5}}, [](auto& l) { return pool(l[0], PoolKind::GlobalMax); }),
      op("avg_pool_2x2", {{1, 2, 5, 6}}, [](auto& l) { return pool(l[0], PoolKind::Avg2x2); }),
      op("channel_mean", {{2, 4, 3, 3}}, [](auto& l) { return channel_reduce(l[0], ChannelReduce::Mean); }),
      op("channel_max", {{2, 4, 3, 3}}, [](auto& l) { return channel_reduce(l[0], ChannelReduce::Max); }),
      op("linear", {{3, 5}, {4, 5}, {4}}, [](auto& l) { return linear(l[0], l[1], l[2]); }),
      op("gaussian_blur", {{1, 2, 6, 7}}, [](auto& l) { return gaussian_blur(l[0], 1.0, 5); }),
      op("pyramid", {{1, 1, 8, 6}},
         [](auto& l) {
           const HighFreqPyramid p = build_pyramid(l[0], 3);
           return concat({reshape(p.levels[0], {48}), reshape(p.levels[1], {12}), reshape(p.levels[2], {4})}, 0);
         }),
      op("edge_attention", {{1, 1, 3, 4}}, [](auto& l) { return edge_attention(l[0], 6, 8); }),
      op("drop_path", {{4, 2, 3, 3}},
         [](auto& l) {
           Rng r(5);
           return drop_path(l[0], 0.5, true, &r);
         }),
      op("dice_loss", {{2, 4, 3, 4}},
         [](auto& l) {
           LabelMap a(12), b(12);
           for (std::size_t i = 0; i < 12; ++i) {
             a[i] = static_cast<std::uint8_t>(i % 4);
             b[i] = static_cast<std::uint8_t>((i * 7 + 1) % 4);
           }
           return dice_loss(l[0], one_hot({&a, &b}, 4, 3, 4, l[0].dtype()), 1.0, false);
         }),
      block("se", {2, 5, 3, 3}, [](const Scope& s, Rng& r) { init_se(s, 5, 2, r); }, se_block),
      block("mbconv", {2, 3, 5, 5},
            [](const Scope& s, Rng& r) { init_mbconv(s, BlockConfig{3, 3, 3, 2, 1}, r); },
            [train_ctx](const Tensor& x, const Scope& s) { return mbconv(x, BlockConfig{3, 3, 3, 2, 1}, s, train_ctx); }),
      block("mbconv_stride2", {1, 2, 6, 6},
            [](const Scope& s, Rng& r) { init_mbconv(s, BlockConfig{2, 4, 5, 1, 2}, r); },
            [](const Tensor& x, const Scope& s) { return mbconv(x, BlockConfig{2, 4, 5, 1, 2}, s, {}); }),
      block("lkec", {2, 3, 5, 4}, [](const Scope& s, Rng& r) { init_lkec(s, 3, 1e-6, r); },
            [](const Tensor& x, const Scope& s) { return lkec_block(x, s, 0.0, {}); }),
      block("cbam", {2, 4, 4, 5}, [](const Scope& s, Rng& r) { init_cbam(s, 4, r, 2); }, cbam),
      block("double_conv", {2, 2, 4, 4}, [](const Scope& s, Rng& r) { init_double_conv(s, 2, 3, r); },
            [train_ctx](const Tensor& x, const Scope& s) { return double_conv(x, s, train_ctx); }),
      block("coarse_head", {2, 8, 3, 3}, [](const Scope& s, Rng& r) { init_coarse_head(s, 8, 3, r); }, coarse_head),
  };
  for (FgAttention mode : {FgAttention::Mean, FgAttention::OneMinusBg}) {
    c.push_back({std::string("mc_ega_") + fg_attention_name(mode), true, [mode](DType dt, Rng& rng) {
                   ParamStore proto;
                   init_mc_ega(Scope(proto, ""), 4, rng);
                   const ParamStore p = proto.to(dt);
                   std::vector<Tensor> leaves{random({2, 4, 6, 6}, rng, dt), random({2, 1, 12, 12}, rng, dt),
                                              random({2, 3, 3, 3}, rng, dt)};
                   GradCheckOptions opt;
                   opt.names = {"feature", "high_freq", "coarse_logits"};
                   for (const auto& [n, t] : p.params()) {
                     leaves.push_back(t);
                     opt.names.push_back(n);
                   }
                   opt.max_coords = 40;
                   opt.seed = rng.next_u64();
                   return grad_check(
                       [&](const std::vector<Tensor>& l) {
                         ParamStore s = rebind_params(p, l, 3);
                         return mc_ega({l[0], l[1], l[2]}, Scope(s, ""), 3, mode);
                       },
                       leaves, opt);
                 }});
  }
  c.push_back({"edunet_forward", false, full_model});
  if (include_broken_rule)
    c.push_back(op("broken_rule", {{3, 4}}, [](auto& l) { return broken_scale(l[0]); }));
  return c;
}

std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<std::string>& only, std::uint64_t seed,
                                              bool include_broken_rule,
                                              const std::function<void(const GradCheckRow&)>& progress) {
  const auto cases = gradcheck_cases(include_broken_rule);
  std::set<std::string> wanted(only.begin(), only.end());
  for (const auto& name : wanted) {
    bool found = false;
    for (const auto& c : cases) found = found || c.name == name;
    if (!found) throw std::invalid_argument("gradcheck: unknown op '" + name + "'");
  }
  std::vector<GradCheckRow> rows;
  const Rng root(seed);
  for (const auto& c : cases) {
    if (!wanted.empty() && !wanted.count(c.name)) continue;
    for (DType dt : {DType::F64, DType::F32}) {
      if (dt == DType::F32 && !c.check_f32) continue;
      Rng rng = root.fork(c.name).fork(dt == DType::F64 ? 64u : 32u);
      const auto t0 = std::chrono::steady_clock::now();
      GradCheckRow row{c.name, dt, c.run(dt, rng), 0.0};
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (progress) progress(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace edunet
