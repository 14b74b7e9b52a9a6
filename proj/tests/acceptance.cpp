// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "edunet/checkpoint.hpp"
#include "edunet/gradcam.hpp"
#include "edunet/gradcheck_suite.hpp"
#include "edunet/metrics.hpp"
#include "edunet/ops.hpp"
#include "edunet/pyramid.hpp"
#include "edunet/train.hpp"

using namespace edunet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / "edunet_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------------------------

Outcome gradient_integrity() {
  Outcome o;
  const auto c0 = std::clock();
  double worst64 = 0, worst32 = 0;
  int count = 0;
  for (const auto& r : run_gradcheck_suite({}, 0)) {
    ++count;
    (r.dtype == DType::F64 ? worst64 : worst32) =
        std::max(r.dtype == DType::F64 ? worst64 : worst32, r.report.max_rel_error);
    o.require(r.report.passed, r.name + " " + dtype_name(r.dtype) + " err " + fmt("%.3g", r.report.max_rel_error));
  }
  const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
  bool caught = true;
  for (const auto& r : run_gradcheck_suite({"broken_rule"}, 0, true)) caught = caught && !r.report.passed;
  o.require(caught, "negative control (broken backward) not detected");
  o.require(cpu < 300, "cpu time " + fmt("%.0fs", cpu) + " over budget");
  o.note(std::to_string(count) + " checks, worst f64 " + fmt("%.2e", worst64) + " (<1e-5), worst f32 " +
         fmt("%.2e", worst32) + " (<1e-3), cpu " + fmt("%.0fs", cpu));
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  Rng rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(3));
    const int h = 1 + static_cast<int>(rng.below(32)), w = 1 + static_cast<int>(rng.below(32));
    // Skewed label draws so that absent classes and empty predictions occur.
    std::vector<double> weights(static_cast<std::size_t>(c));
    for (auto& x : weights) x = rng.bernoulli(0.3) ? 0.0 : rng.uniform();
    weights[0] += 0.05;
    auto draw = [&] {
      const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
      double u = rng.uniform() * total;
      for (int k = 0; k < c; ++k) {
        if (u < weights[static_cast<std::size_t>(k)]) return static_cast<std::uint8_t>(k);
        u -= weights[static_cast<std::size_t>(k)];
      }
      return static_cast<std::uint8_t>(0);
    };
    LabelMap pred(static_cast<std::size_t>(h * w)), truth(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      truth[i] = draw();
      pred[i] = rng.bernoulli(0.7) ? truth[i] : draw();
    }
    for (bool pooled : {false, true}) {
      const MetricsReport r = compute_metrics({pred}, {truth}, c, pooled);
      for (int k = 1; k < c; ++k) {
        long tp = 0, fn = 0, fp = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          tp += pred[i] == k && truth[i] == k;
          fn += pred[i] != k && truth[i] == k;
          fp += pred[i] == k && truth[i] != k;
        }
        const ClassSummary& s = r.classes[static_cast<std::size_t>(k - 1)];
        o.require(s.totals.tp == tp && s.totals.fn == fn && s.totals.fp == fp,
                  "counts differ, trial " + std::to_string(trial));
        const bool dsc_def = tp + fn + fp > 0, sens_def = tp + fn > 0;
        const double dsc = 2.0 * tp / (2.0 * tp + fn + fp), sens = static_cast<double>(tp) / (tp + fn);
        o.require(std::isnan(s.dsc) == !dsc_def && (!dsc_def || std::fabs(s.dsc - dsc) <= 1e-9),
                  "dsc differs, trial " + std::to_string(trial));
        o.require(std::isnan(s.sensitivity) == !sens_def && (!sens_def || std::fabs(s.sensitivity - sens) <= 1e-9),
                  "sensitivity differs, trial " + std::to_string(trial));
        ++compared;
      }
    }
  }
  o.note("50 pairs, " + std::to_string(compared) + " class comparisons, exact counts, ratios within 1e-9");
  return o;
}

Outcome pyramid_identities() {
  Outcome o;
  Rng rng(77);
  int exact = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 16 + static_cast<int>(rng.below(49)), w = 16 + static_cast<int>(rng.below(49));
    const DType dt = trial % 4 == 3 ? DType::F64 : DType::F32;
    Tensor img = Tensor::zeros({1, 1, h, w}, dt);
    auto& b = img.mutable_buffer();
    // Even trials: 8-bit intensities as loaded from PNG; odd trials: arbitrary grid values.
    for (std::size_t i = 0; i < b.size(); ++i)
      b.set(i, trial % 2 == 0 ? byte_to_unit(static_cast<std::uint8_t>(rng.below(256))) : rng.uniform());
    if (trial % 2 == 1) img = snap_to_unit_grid(img);
    const HighFreqPyramid p = build_pyramid(img, 4);
    const Tensor recon = add(gaussian_blur(img), p.levels[0]);
    bool same = true;
    for (std::int64_t i = 0; i < img.numel(); ++i) same = same && recon.at(i) == img.at(i);
    o.require(same, "reconstruction not bit-exact, trial " + std::to_string(trial));
    exact += same;

    const double v = rng.uniform();
    const HighFreqPyramid flat = build_pyramid(Tensor::full({1, 1, h, w}, v, dt), 4);
    double worst = 0;
    for (const auto& level : flat.levels)
      for (std::int64_t i = 0; i < level.numel(); ++i) worst = std::max(worst, std::fabs(level.at(i)));
    o.require(worst < 1e-7, "constant image level magnitude " + fmt("%.3g", worst));
  }
  o.note(std::to_string(exact) + "/20 bit-exact reconstructions; constant images give zero pyramids");
  return o;
}

Outcome attention_normalization() {
  Outcome o;
  Rng rng(5);
  double worst_sum = 0, worst_c2 = 0;
  for (int c = 2; c <= 4; ++c)
    for (int trial = 0; trial < 5; ++trial) {
      Tensor logits = Tensor::zeros({2, c, 4 + trial, 5}, DType::F32);
      auto& b = logits.mutable_buffer();
      for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng.uniform(-6, 6));
      const ClassAttention mean_att = class_attention(logits, 8 + 2 * trial, 10, FgAttention::Mean);
      const ClassAttention inv_att = class_attention(logits, 8 + 2 * trial, 10, FgAttention::OneMinusBg);
      for (std::int64_t i = 0; i < mean_att.background.numel(); ++i) {
        worst_sum = std::max(worst_sum,
                             std::fabs(mean_att.background.at(i) + (c - 1) * mean_att.foreground.at(i) - 1.0));
        if (c == 2) worst_c2 = std::max(worst_c2, std::fabs(mean_att.foreground.at(i) - inv_att.foreground.at(i)));
      }
    }
  o.require(worst_sum <= 1e-6, "A_bg + (C-1) A_fg deviates by " + fmt("%.3g", worst_sum));
  o.require(worst_c2 <= 1e-6, "C=2 variants differ by " + fmt("%.3g", worst_c2));
  o.note("max |A_bg+(C-1)A_fg-1| " + fmt("%.2e", worst_sum) + ", C=2 variant gap " + fmt("%.2e", worst_c2));
  return o;
}

// Shared between the overfit and Grad-CAM criteria.
struct OverfitRun {
  std::vector<Sample> data;
  Checkpoint model;
  bool done = false;
};

Outcome synthetic_overfit(OverfitRun& run) {
  Outcome o;
  RunSettings s;
  s.model = EDUNetConfig::tiny(3);
  s.model.input_h = s.model.input_w = 64;
  s.train.lr = 1e-2;
  s.train.max_epochs = 200;
  s.train.seed = 1;
  s.augment = AugmentConfig::none();
  run.data = synth_generate(8, 64, 1, 3);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(run.data, run.data, s, [](const TrainLogRow& row) {
    if (row.epoch % 25 == 0)
      std::cout << "  overfit epoch " << row.epoch << " loss " << fmt("%.4f", row.train_loss) << std::endl;
  });
  const double secs = seconds_since(t0);
  run.model = std::move(r.last);
  run.done = true;
  double dsc[3];
  const PredictionSource sources[] = {PredictionSource::Fused, PredictionSource::Global, PredictionSource::Local};
  for (int i = 0; i < 3; ++i) {
    EvalOptions opt;
    opt.source = sources[i];
    dsc[i] = evaluate(run.model, run.data, opt).mean_foreground_dsc();
  }
  o.require(dsc[0] >= 0.90, "fused train DSC " + fmt("%.4f", dsc[0]) + " < 0.90");
  o.require(secs <= 900, "runtime " + fmt("%.0fs", secs));
  o.note("200 epochs in " + fmt("%.0fs", secs) + ", train DSC fused " + fmt("%.4f", dsc[0]) + ", global " +
         fmt("%.4f", dsc[1]) + ", local " + fmt("%.4f", dsc[2]) + "; fused " +
         (dsc[0] >= std::min(dsc[1], dsc[2]) ? "is not worse than" : "is WORSE than") + " the weaker branch");
  return o;
}

Outcome ablation_closure() {
  Outcome o;
  const fs::path data = work_dir() / "ablation_data";
  std::ostringstream sink, err;
  o.require(cli::run({"synth", "--out", data.string(), "--n", "8", "--size", "64", "--seed", "2", "--classes", "3"},
                     sink, err) == 0,
            "synth failed");
  const std::vector<std::pair<std::string, std::vector<std::string>>> rows = {
      {"global-only", {"--global-only", "--no-mcega"}},
      {"local-only", {"--local-only"}},
      {"global+local", {"--no-mcega"}},
      {"global+mcega", {"--global-only"}},
      {"full", {}},
  };
  std::string summary;
  for (const auto& [name, flags] : rows) {
    const fs::path out = work_dir() / ("ablation_" + name);
    std::vector<std::string> args = {"train", "--data", data.string(), "--out", out.string(),
                                     "--set", "model.profile=tiny", "--set", "model.num_classes=3",
                                     "--set", "model.input_h=64", "--set", "model.input_w=64",
                                     "--set", "train.max_epochs=20", "--set", "train.lr=0.01", "--seed", "3"};
    args.insert(args.end(), flags.begin(), flags.end());
    const int code = cli::run(args, sink, err);
    o.require(code == 0, name + " train exit " + std::to_string(code) + " " + err.str());
    if (code != 0) continue;

    std::istringstream log(slurp(out / "train_log.csv"));
    std::string line;
    std::getline(log, line);
    bool finite = line == "epoch,train_loss,val_loss,lr";
    int epochs = 0;
    while (std::getline(log, line)) {
      ++epochs;
      std::stringstream ls(line);
      std::string cell;
      for (int col = 0; std::getline(ls, cell, ','); ++col)
        if (col == 1 || col == 2) finite = finite && std::isfinite(std::stod(cell));
    }
    o.require(finite && epochs == 20, name + " log malformed or non-finite");

    const fs::path csv = out / "metrics.csv";
    o.require(cli::run({"eval", "--ckpt", (out / "best.ckpt").string(), "--data", data.string(), "--out",
                        csv.string()},
                       sink, err) == 0,
              name + " eval failed");
    std::istringstream report(slurp(csv));
    std::getline(report, line);
    bool well_formed = line == "dataset,fold,class,dsc,sensitivity,tp,fn,fp";
    int lines = 0;
    double dsc_sum = 0;
    while (std::getline(report, line)) {
      ++lines;
      std::vector<std::string> cells;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
      well_formed = well_formed && cells.size() == 8;
      if (lines <= 2 && cells.size() == 8) dsc_sum += std::stod(cells[3]);
    }
    o.require(well_formed && lines == 4, name + " report malformed");
    summary += " " + name + "=" + fmt("%.3f", dsc_sum / 2);
  }
  o.note("20 epochs each, finite losses, reports well formed; mean fg DSC" + summary);
  return o;
}

Outcome determinism() {
  Outcome o;
  RunSettings s;
  s.model = EDUNetConfig::tiny(3);
  s.model.input_h = s.model.input_w = 32;
  s.train.max_epochs = 3;
  s.train.lr = 3e-3;
  s.train.seed = 42;
  const auto data = synth_generate(6, 32, 9, 3);
  auto log_text = [](const TrainResult& r) {
    std::ostringstream log;
    write_train_log(log, r.log);
    return log.str();
  };
  TrainResult a = train(data, data, s);
  const TrainResult b = train(data, data, s);
  o.require(log_text(a) == log_text(b), "training logs differ");
  o.require(serialize_checkpoint(a.last) == serialize_checkpoint(b.last) &&
                serialize_checkpoint(a.best) == serialize_checkpoint(b.best),
            "checkpoint bytes differ");
  RunSettings other = s;
  other.train.seed = 43;
  o.require(log_text(train(data, data, other)) != log_text(a), "a different seed reproduced the same log");

  Checkpoint& ck = a.last;
  const fs::path path = work_dir() / "determinism.ckpt";
  save_checkpoint(ck, path);
  Checkpoint loaded = load_checkpoint(path);
  std::vector<const Sample*> ptrs;
  for (const auto& x : data) ptrs.push_back(&x);
  const Tensor x = images_to_tensor(ptrs);
  auto forward = [&](Checkpoint& c) {
    InferenceGuard guard(c.store);
    const EDUNetOutput out = edunet_forward(x, c.settings.model, c.store, RunContext{});
    return concat({out.logits_global, out.logits_local, out.fused_prob}, 1);
  };
  const Tensor before = forward(ck), after = forward(loaded);
  bool same = before.shape() == after.shape();
  for (std::int64_t i = 0; same && i < before.numel(); ++i) same = before.at(i) == after.at(i);
  o.require(same, "forward after save/load is not bit-identical");
  o.require(slurp(path) == serialize_checkpoint(loaded), "reserialized checkpoint differs");
  o.note("logs and checkpoints byte-identical across reruns; save/load/forward bit-identical");
  return o;
}

Outcome shape_contract() {
  Outcome o;
  for (int profile = 0; profile < 2; ++profile) {
    EDUNetConfig cfg = profile == 0 ? EDUNetConfig::b0(4) : EDUNetConfig::tiny(4);
    const int size = profile == 0 ? 512 : 64;
    cfg.input_h = cfg.input_w = size;
    ParamStore store;
    Rng rng(0);
    init_edunet(store, cfg, rng);
    InferenceGuard guard(store);
    const auto t0 = std::chrono::steady_clock::now();
    const EDUNetOutput out = edunet_forward(Tensor::full({1, 1, size, size}, 0.5), cfg, store, RunContext{});
    const Shape want{1, 4, size, size};
    const std::string label = (profile == 0 ? "b0@" : "tiny@") + std::to_string(size);
    o.require(out.logits_global.shape() == want, label + " global logits " + shape_str(out.logits_global.shape()));
    o.require(out.logits_local.shape() == want, label + " local logits " + shape_str(out.logits_local.shape()));
    o.require(out.fused_prob.shape() == want, label + " fused " + shape_str(out.fused_prob.shape()));
    o.note(label + " -> " + shape_str(out.logits_global.shape()) + " (" + fmt("%.1fs", seconds_since(t0)) + ")");
  }
  return o;
}

Outcome grad_cam_sanity(OverfitRun& run) {
  Outcome o;
  if (!run.done) {
    o.require(false, "overfit model unavailable");
    return o;
  }
  const std::string layer = "global.fuse.0";
  int hits = 0;
  std::string ious;
  for (const Sample& s : run.data) {
    const Heatmap h = grad_cam(run.model.store, run.model.settings.model, s, layer);
    std::vector<std::size_t> order(h.values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return h.values[a] > h.values[b]; });
    std::vector<bool> top(h.values.size(), false);
    for (std::size_t i = 0; i < h.values.size() / 10; ++i) top[order[i]] = true;
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < top.size(); ++i) {
      const bool lesion = s.mask[i] > 0;
      inter += top[i] && lesion;
      uni += top[i] || lesion;
    }
    const double iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    hits += iou > 0.05;
    ious += (ious.empty() ? "" : ",") + fmt("%.2f", iou);
  }
  o.require(hits >= 6, std::to_string(hits) + "/8 samples above IoU 0.05");
  o.note("layer " + layer + ", " + std::to_string(hits) + "/8 with top-decile IoU > 0.05 (" + ious + ")");
  return o;
}

}  // namespace

int main() {
  OverfitRun overfit;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"metric oracle equivalence", metric_oracle},
      {"pyramid identities", pyramid_identities},
      {"attention normalization", attention_normalization},
      {"synthetic overfit", [&] { return synthetic_overfit(overfit); }},
      {"ablation closure", ablation_closure},
      {"determinism and persistence", determinism},
      {"shape contract", shape_contract},
      {"grad-cam sanity", [&] { return grad_cam_sanity(overfit); }},
  };
  int failures = 0;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::string line = std::to_string(i + 1) + ". " + (o.pass ? "PASS" : "FAIL") + "  " + criteria[i].first + " [" +
                       fmt("%.0fs", seconds_since(t0)) + "]: " + o.detail;
    std::cout << line << std::endl;
    lines.push_back(line);
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l.substr(0, l.find(" [")) << "\n";
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
