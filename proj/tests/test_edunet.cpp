#include <cmath>
#include <cstring>
#include <set>

#include "doctest.h"
#include "edunet/edunet.hpp"
#include "edunet/gradcheck.hpp"
#include "test_util.hpp"

using namespace edunet;
using namespace edunet::testing;

namespace {

struct Model {
  EDUNetConfig cfg;
  ParamStore store;
};

Model make_model(EDUNetConfig cfg, std::uint64_t seed = 1) {
  Model m{std::move(cfg), {}};
  Rng rng(seed);
  init_edunet(m.store, m.cfg, rng);
  return m;
}

void check_prob_simplex(const Tensor& p, double tol) {
  const std::int64_t n = p.dim(0), c = p.dim(1), hw = p.dim(2) * p.dim(3);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t q = 0; q < hw; ++q) {
      double s = 0;
      for (std::int64_t k = 0; k < c; ++k) s += p.at((i * c + k) * hw + q);
      CHECK(std::fabs(s - 1.0) <= tol);
    }
}

std::vector<std::string> params_with_prefix(const ParamStore& store, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& [name, _] : store.params())
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

Tensor random_image(std::int64_t n, std::int64_t h, std::int64_t w, Rng& rng) {
  return snap_to_unit_grid(random_tensor({n, 1, h, w}, rng, DType::F32, 0, 1));
}

}  // namespace

TEST_CASE("config validation and stage plans") {
  EDUNetConfig cfg = EDUNetConfig::tiny(3);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.required_divisor() == 16);
  CHECK(cfg.local_downsamplings() == 4);
  const auto tiny = cfg.local_stages();
  REQUIRE(tiny.size() == 7);
  const int tiny_ch[] = {4, 6, 10, 20, 28, 48, 80};
  for (int i = 0; i < 7; ++i) {
    CHECK(tiny[i].channels == tiny_ch[i]);
    CHECK(tiny[i].repeats == 1);
  }

  EDUNetConfig b0 = EDUNetConfig::b0(4);
  CHECK_NOTHROW(b0.validate());
  CHECK(b0.local_downsamplings() == 5);
  CHECK(b0.required_divisor() == 32);
  const auto st = b0.local_stages();
  const int ch[] = {16, 24, 40, 80, 112, 192, 320}, rep[] = {1, 2, 2, 3, 3, 4, 1};
  const int str[] = {1, 2, 2, 2, 1, 2, 1}, ker[] = {3, 3, 5, 3, 5, 5, 3};
  for (int i = 0; i < 7; ++i) {
    CHECK(st[i].channels == ch[i]);
    CHECK(st[i].repeats == rep[i]);
    CHECK(st[i].stride == str[i]);
    CHECK(st[i].kernel == ker[i]);
    CHECK(st[i].expand_ratio == (i == 0 ? 1 : 6));
  }

  EDUNetConfig bad = cfg;
  bad.use_global = bad.use_local = false;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.input_h = 72;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.stem_stride = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lkec_blocks = {1, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  CHECK(parse_profile("b0") == Profile::B0);
  CHECK_THROWS_AS(parse_profile("b7"), std::invalid_argument);
  CHECK(parse_fg_attention("one_minus_bg") == FgAttention::OneMinusBg);
}

TEST_CASE("tiny model shape contract at 64x64") {
  Model m = make_model(EDUNetConfig::tiny(3));
  Rng rng(2);
  Tensor img = random_image(2, 64, 64, rng);
  for (bool training : {true, false}) {
    EDUNetOutput out = edunet_forward(img, m.cfg, m.store, {training, &rng});
    CHECK(out.logits_global.shape() == Shape{2, 3, 64, 64});
    CHECK(out.logits_local.shape() == Shape{2, 3, 64, 64});
    CHECK(out.fused_prob.shape() == Shape{2, 3, 64, 64});
    check_prob_simplex(out.fused_prob, 1e-6);
  }
  CHECK_THROWS_AS(edunet_forward(random_image(1, 56, 64, rng), m.cfg, m.store, {}), ShapeError);
}

TEST_CASE("local branch skips and decoder") {
  Model m = make_model(EDUNetConfig::tiny(4));
  Rng rng(3);
  std::map<std::string, Tensor> taps;
  RunContext ctx{true, &rng, &taps};
  auto out = local_branch_forward(random_image(1, 64, 64, rng), m.cfg, Scope(m.store, "local"), ctx);
  REQUIRE(out.skips.size() == 4);
  const std::int64_t ext[] = {32, 16, 8, 4}, chans[] = {4, 6, 10, 80};
  for (int i = 0; i < 4; ++i) {
    CHECK(out.skips[i].dim(1) == chans[i]);
    CHECK(out.skips[i].dim(2) == ext[i]);
    CHECK(out.skips[i].dim(3) == ext[i]);
  }
  CHECK(out.logits.shape() == Shape{1, 4, 64, 64});
  for (const char* name : {"local.enc.0", "local.enc.3", "local.dec.0", "local.dec.3"})
    CHECK(taps.count(name) == 1);
  CHECK_THROWS_AS(local_branch_forward(random_image(1, 40, 40, rng), m.cfg, Scope(m.store, "local"), ctx),
                  ShapeError);
}

TEST_CASE("global encoder extents for both stem strides") {
  Rng rng(4);
  for (int stride : {2, 4}) {
    EDUNetConfig cfg = EDUNetConfig::tiny(3);
    cfg.stem_stride = stride;
    Model m = make_model(cfg);
    auto feats = global_encoder_forward(random_image(1, 64, 64, rng), m.cfg, Scope(m.store, "global"), {});
    REQUIRE(feats.size() == 4);
    for (int i = 0; i < 4; ++i) {
      const std::int64_t e = 64 / (stride << i);
      CHECK(feats[i].shape() == Shape{1, cfg.global_channels[i], e, e});
    }
    EDUNetOutput out = edunet_forward(random_image(1, 64, 64, rng), m.cfg, m.store, {});
    CHECK(out.logits_global.shape() == Shape{1, 3, 64, 64});
  }
}

TEST_CASE("coarse head") {
  Rng rng(5);
  ParamStore store;
  Scope s(store, "h");
  init_coarse_head(s, 24, 3, rng);
  CHECK(store.param("h.conv1.weight").shape() == Shape{6, 24, 3, 3});
  CHECK(store.param("h.conv2.weight").shape() == Shape{3, 6, 1, 1});
  Tensor f = random_tensor({2, 24, 5, 6}, rng);
  CHECK(coarse_head(f, s).shape() == Shape{2, 3, 5, 6});

  ParamStore narrow;
  init_coarse_head(Scope(narrow, "h"), 8, 4, rng);
  CHECK(narrow.param("h.conv1.weight").dim(0) == 4);

  for (auto& [name, t] : store.params()) t.mutable_buffer().fill(0);
  Tensor p = softmax(coarse_head(f, s), 1);
  for (std::int64_t i = 0; i < p.numel(); ++i) CHECK(p.at(i) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("class attention normalization") {
  Rng rng(6);
  for (int c = 2; c <= 5; ++c) {
    Tensor logits = random_tensor({2, c, 3, 4}, rng, DType::F32, -4, 4);
    ClassAttention mean_att = class_attention(logits, 6, 8, FgAttention::Mean);
    ClassAttention inv_att = class_attention(logits, 6, 8, FgAttention::OneMinusBg);
    CHECK(mean_att.background.shape() == Shape{2, 1, 6, 8});
    for (std::int64_t i = 0; i < mean_att.background.numel(); ++i) {
      const double bg = mean_att.background.at(i), fg = mean_att.foreground.at(i);
      CHECK(std::fabs(bg + (c - 1) * fg - 1.0) <= 1e-6);
      CHECK(bg >= 0.0);
      CHECK(bg <= 1.0);
      CHECK(fg >= 0.0);
      CHECK(fg <= 1.0);
      if (c == 2) CHECK(std::fabs(fg - inv_att.foreground.at(i)) <= 1e-6);
    }
  }
}

TEST_CASE("mc_ega residual path, shapes and errors") {
  Rng rng(7);
  ParamStore store;
  Scope s(store, "m");
  init_mc_ega(s, 6, rng);
  MCEGAInputs in{random_tensor({2, 6, 8, 8}, rng), random_tensor({2, 1, 16, 16}, rng),
                 random_tensor({2, 3, 4, 4}, rng)};
  CHECK(mc_ega(in, s, 3, FgAttention::Mean).shape() == Shape{2, 6, 8, 8});

  for (const char* n : {"gate.weight", "gate.bias", "value.weight", "value.bias",
                        "cbam.mlp.fc1.weight", "cbam.mlp.fc2.weight", "cbam.spatial.weight"})
    s.param(n).mutable_buffer().fill(0);
  s.param("cbam.mlp.fc2.bias").mutable_buffer().fill(40);
  s.param("cbam.spatial.bias").mutable_buffer().fill(40);
  CHECK(max_abs_diff(mc_ega(in, s, 3, FgAttention::OneMinusBg), in.encoder_feature) <= 1e-6);

  CHECK_THROWS_AS(mc_ega(in, s, 4, FgAttention::Mean), ShapeError);
}

TEST_CASE("mc_ega gradients reach every input and parameter") {
  Rng rng(8);
  ParamStore store;
  init_mc_ega(Scope(store, ""), 4, rng);
  Tensor f = random_tensor({2, 4, 6, 6}, rng).set_requires_grad(true);
  Tensor hf = random_tensor({2, 1, 12, 12}, rng);
  Tensor pred = random_tensor({2, 3, 3, 3}, rng).set_requires_grad(true);
  backward(sum(mc_ega({f, hf, pred}, Scope(store, ""), 3, FgAttention::Mean)));
  CHECK(f.has_grad());
  CHECK(pred.has_grad());
  for (const auto& [name, t] : store.params()) {
    CAPTURE(name);
    CHECK(t.has_grad());
  }

  ParamStore p64 = store.to(DType::F64);
  std::vector<Tensor> inputs{f.detach().to(DType::F64), hf.to(DType::F64), pred.detach().to(DType::F64)};
  for (const auto& [name, t] : p64.params()) inputs.push_back(t);
  for (FgAttention mode : {FgAttention::Mean, FgAttention::OneMinusBg}) {
    auto fn = [&](const std::vector<Tensor>& l) {
      ParamStore ps = rebind_params(p64, l, 3);
      return mc_ega({l[0], l[1], l[2]}, Scope(ps, ""), 3, mode);
    };
    GradCheckOptions opt;
    opt.max_coords = 40;
    auto r = grad_check(fn, inputs, opt);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("fusion of branch probabilities") {
  Rng rng(9);
  Tensor a = random_tensor({1, 3, 4, 4}, rng, DType::F64, -3, 3);
  Tensor b = random_tensor({1, 3, 4, 4}, rng, DType::F64, -3, 3);
  CHECK(max_abs_diff(fuse_probabilities({a}), softmax(a, 1)) == 0.0);
  CHECK(max_abs_diff(fuse_probabilities({a, a}), softmax(a, 1)) <= 1e-15);
  check_prob_simplex(fuse_probabilities({a, b}), 1e-12);
  CHECK_THROWS_AS(fuse_probabilities({}), std::invalid_argument);

  EDUNetConfig cfg = EDUNetConfig::tiny(3);
  cfg.use_local = false;
  Model m = make_model(cfg);
  CHECK(params_with_prefix(m.store, "local.").empty());
  EDUNetOutput out = edunet_forward(random_image(1, 32, 32, rng), m.cfg, m.store, {});
  CHECK_FALSE(out.logits_local.defined());
  CHECK(max_abs_diff(out.fused_prob, softmax(out.logits_global, 1)) == 0.0);

  auto masks = argmax_masks(out.fused_prob);
  REQUIRE(masks.size() == 1);
  CHECK(masks[0].size() == 32u * 32u);
}

TEST_CASE("ablation configurations build, run and back-propagate to every parameter") {
  struct Row { bool global, local, mcega; };
  Rng rng(10);
  for (Row row : {Row{true, false, true}, Row{false, true, false}, Row{true, true, false},
                  Row{true, true, true}, Row{true, false, false}}) {
    CAPTURE(row.global);
    CAPTURE(row.local);
    CAPTURE(row.mcega);
    EDUNetConfig cfg = EDUNetConfig::tiny(3);
    cfg.use_global = row.global;
    cfg.use_local = row.local;
    cfg.use_mcega = row.mcega;
    Model m = make_model(cfg);
    CHECK(params_with_prefix(m.store, "global.mcega").empty() == !(row.global && row.mcega));
    CHECK(params_with_prefix(m.store, "global.coarse").empty() == !(row.global && row.mcega));
    EDUNetOutput out = edunet_forward(random_image(2, 32, 32, rng), m.cfg, m.store, {true, &rng});
    Tensor loss = sum(mul(out.fused_prob, random_tensor(out.fused_prob.shape(), rng)));
    if (row.global) loss = add(loss, mean(out.logits_global));
    if (row.local) loss = add(loss, mean(out.logits_local));
    backward(loss);
    for (const auto& [name, t] : m.store.params()) {
      CAPTURE(name);
      CHECK(t.has_grad());
      bool nonzero = false;
      Tensor g = t.grad();
      for (std::int64_t i = 0; i < g.numel() && !nonzero; ++i) nonzero = g.at(i) != 0.0;
      CHECK(nonzero);
    }
  }
}

TEST_CASE("forward is deterministic for a fixed seed") {
  Rng rng(11);
  Tensor img = random_image(1, 32, 32, rng);
  auto run = [&] {
    Model m = make_model(EDUNetConfig::tiny(3), 42);
    Rng drop(5);
    return edunet_forward(img, m.cfg, m.store, {true, &drop}).fused_prob.to_vector();
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);

  Model m1 = make_model(EDUNetConfig::tiny(3), 1), m2 = make_model(EDUNetConfig::tiny(3), 2);
  CHECK(max_abs_diff(m1.store.params()[0].second, m2.store.params()[0].second) > 0.0);
}

TEST_CASE("global decoder rejects a mismatched pyramid") {
  Model m = make_model(EDUNetConfig::tiny(3));
  Rng rng(12);
  Tensor img = random_image(1, 32, 32, rng);
  auto feats = global_encoder_forward(img, m.cfg, Scope(m.store, "global"), {});
  CHECK_THROWS_AS(global_decoder_forward(feats, build_pyramid(img, 3), m.cfg, Scope(m.store, "global"), {}),
                  ShapeError);
  feats.pop_back();
  CHECK_THROWS_AS(global_decoder_forward(feats, build_pyramid(img, 4), m.cfg, Scope(m.store, "global"), {}),
                  ShapeError);
}

TEST_CASE("taps record the named activations") {
  Model m = make_model(EDUNetConfig::tiny(3));
  Rng rng(13);
  std::map<std::string, Tensor> taps;
  edunet_forward(random_image(1, 32, 32, rng), m.cfg, m.store, {false, nullptr, &taps});
  for (int k = 0; k < 4; ++k)
    for (const char* base : {"global.enc.", "global.mcega.", "global.fuse.", "global.dec."})
      CHECK(taps.count(base + std::to_string(k)) == 1);
  CHECK(taps.count("local.enc.3") == 1);
}
