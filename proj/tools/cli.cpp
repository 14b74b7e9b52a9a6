#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "edunet/checkpoint.hpp"
#include "edunet/config.hpp"
#include "edunet/data.hpp"
#include "edunet/gradcam.hpp"
#include "edunet/gradcheck_suite.hpp"
#include "edunet/metrics.hpp"
#include "edunet/train.hpp"

namespace edunet::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string dataset_name(const fs::path& root) {
  fs::path p = root;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Options shared by the commands that build a model from settings.
struct SettingsOptions {
  std::string config;
  std::vector<std::string> sets;
  bool global_only = false;
  bool local_only = false;
  bool no_mcega = false;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value settings file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one setting, key=value (repeatable)");
    auto* g = app->add_flag("--global-only", global_only, "disable the local branch");
    auto* l = app->add_flag("--local-only", local_only, "disable the global branch");
    g->excludes(l);
    app->add_flag("--no-mcega", no_mcega, "disable edge-guided attention in the global decoder");
    app->add_option("--seed", seed, "training seed (overrides train.seed)");
  }

  RunSettings resolve() const {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!config.empty()) pairs = read_config_file(config);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
      bool replaced = false;
      for (auto& [k, v] : pairs)
        if (k == key) {
          v = value;
          replaced = true;
        }
      if (!replaced) pairs.emplace_back(key, value);
    }
    RunSettings r = RunSettings::from_pairs(pairs);
    if (global_only) r.model.use_local = false;
    if (local_only) r.model.use_global = false;
    if (no_mcega) r.model.use_mcega = false;
    if (seed) r.train.seed = *seed;
    r.validate();
    return r;
  }
};

std::string run_header(const std::string& command, const std::vector<std::pair<std::string, std::string>>& opts) {
  std::string s = "# edunet " + command + "\n";
  for (const auto& [k, v] : opts) s += "# " + k + ": " + v + "\n";
  return s;
}

// ---------------------------------------------------------------------------------------------

struct SynthCmd {
  std::string out_dir;
  int n = 8, size = 64, classes = 4;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "generate a synthetic OCT dataset");
    c->add_option("--out", out_dir, "output directory")->required();
    c->add_option("--n", n, "number of samples")->check(CLI::NonNegativeNumber);
    c->add_option("--size", size, "image side in pixels (>= 32)");
    c->add_option("--seed", seed, "generator seed");
    c->add_option("--classes", classes, "class count including background (2-4 draw lesions)");
  }

  int run(std::ostream& out) const {
    const auto samples = synth_generate(n, size, seed, classes);
    save_dataset(out_dir, samples);
    write_text(fs::path(out_dir) / "config.txt",
               run_header("synth", {}) + "synth.n = " + std::to_string(n) + "\nsynth.size = " +
                   std::to_string(size) + "\nsynth.seed = " + std::to_string(seed) +
                   "\nsynth.classes = " + std::to_string(classes) + "\n");
    out << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    return kOk;
  }
};

struct TrainCmd {
  std::string data, out_dir;
  int fold = -1;
  SettingsOptions so;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("train", "train one model");
    c->add_option("--data", data, "dataset root with images/ and masks/")->required();
    c->add_option("--out", out_dir, "run directory")->required();
    c->add_option("--fold", fold, "hold out this fold for validation; -1 trains and validates on everything");
    so.attach(c);
  }

  int run(std::ostream& out) const {
    const RunSettings settings = so.resolve();
    const auto dataset = load_dataset(data, settings.model.num_classes);
    std::vector<Sample> train_set = dataset, val_set = dataset;
    if (fold >= 0) {
      std::vector<std::string> ids;
      for (const auto& s : dataset) ids.push_back(s.id);
      FoldSplit split = split_fold(dataset, make_folds(ids, settings.folds, settings.fold_seed), fold);
      train_set = std::move(split.train);
      val_set = std::move(split.held_out);
    }
    make_dir(out_dir);
    const fs::path dir(out_dir);
    write_text(dir / "config.txt", run_header("train", {{"data", data}, {"fold", std::to_string(fold)}}) +
                                       settings.to_text());
    out << "training on " << train_set.size() << " samples, validating on " << val_set.size() << "\n";
    const TrainResult r = train(train_set, val_set, settings, [&](const TrainLogRow& row) {
      out << "epoch " << row.epoch << " train_loss " << fmt(row.train_loss, "%.6f") << " val_loss "
          << fmt(row.val_loss, "%.6f") << " lr " << format_double(row.lr) << "\n";
      out.flush();
    });
    std::ostringstream log;
    write_train_log(log, r.log);
    write_text(dir / "train_log.csv", log.str());
    save_checkpoint(r.best, dir / "best.ckpt");
    save_checkpoint(r.last, dir / "last.ckpt");
    out << "best epoch " << r.best.epoch << ", checkpoints in " << out_dir << "\n";
    return kOk;
  }
};

struct EvalCmd {
  std::string ckpt, data, out_file, source = "fused";
  std::optional<int> folds;
  std::optional<std::uint64_t> fold_seed;
  bool pooled = false;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "compute DSC and sensitivity for a checkpoint");
    c->add_option("--ckpt", ckpt, "checkpoint file")->required();
    c->add_option("--data", data, "dataset root")->required();
    c->add_option("--folds", folds, "report each of K folds separately plus mean±std rows");
    c->add_option("--fold-seed", fold_seed, "fold assignment seed (default: the checkpoint's)");
    c->add_option("--source", source, "fused, global or local");
    c->add_flag("--pooled", pooled, "ratios of summed counts instead of per-image means");
    c->add_option("--out", out_file, "CSV path (default: stdout)");
  }

  int run(std::ostream& out) const {
    EvalOptions opt;
    opt.source = parse_prediction_source(source);
    opt.pooled = pooled;
    opt.dataset = dataset_name(data);
    if (folds && *folds < 1) throw std::invalid_argument("--folds must be at least 1");
    if (!fs::exists(ckpt)) throw CheckpointError("checkpoint not found: " + ckpt);
    Checkpoint ck = load_checkpoint(ckpt);
    const auto dataset = load_dataset(data, ck.settings.model.num_classes);
    if (dataset.empty()) throw DataError("no samples in " + data);
    std::vector<MetricsReport> reports;
    if (!folds) {
      reports.push_back(evaluate(ck, dataset, opt));
    } else {
      std::vector<std::string> ids;
      for (const auto& s : dataset) ids.push_back(s.id);
      const FoldSpec spec = make_folds(ids, *folds, fold_seed.value_or(ck.settings.fold_seed));
      for (int k = 0; k < *folds; ++k) {
        std::vector<Sample> part;
        for (const auto& s : dataset)
          if (spec.fold_of(s.id) == k) part.push_back(s);
        if (part.empty()) throw DataError("fold " + std::to_string(k) + " is empty");
        opt.fold = k;
        reports.push_back(evaluate(ck, part, opt));
      }
    }
    std::ostringstream csv;
    write_metrics_csv(csv, reports);
    if (out_file.empty()) {
      out << csv.str();
    } else {
      write_text(out_file, csv.str());
      for (const auto& a : aggregate_folds(reports))
        out << "class " << a.cls << " dsc " << fmt(a.dsc_mean) << " sensitivity " << fmt(a.sens_mean) << "\n";
    }
    return kOk;
  }
};

struct InferCmd {
  std::string ckpt, image, out_file, heatmap, heatmap_out, source = "fused";

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("infer", "segment one image");
    c->add_option("--ckpt", ckpt, "checkpoint file")->required();
    c->add_option("--image", image, "8-bit grayscale PNG")->required();
    c->add_option("--out", out_file, "indexed label PNG at model resolution")->required();
    c->add_option("--source", source, "fused, global or local");
    c->add_option("--heatmap", heatmap, "also write a Grad-CAM map for this layer");
    c->add_option("--heatmap-out", heatmap_out, "heatmap PNG path (default: <out>_cam.png)");
  }

  int run(std::ostream& out) const {
    if (!fs::exists(ckpt)) throw CheckpointError("checkpoint not found: " + ckpt);
    Checkpoint ck = load_checkpoint(ckpt);
    const EDUNetConfig& cfg = ck.settings.model;
    if (!heatmap.empty()) {
      const auto layers = grad_cam_layers(ck.store, cfg);
      if (std::find(layers.begin(), layers.end(), heatmap) == layers.end()) {
        std::string list;
        for (const auto& l : layers) list += " " + l;
        throw std::invalid_argument("unknown heatmap layer '" + heatmap + "'; available:" + list);
      }
    }
    const GrayPng png = read_png_gray(image);
    Sample s;
    s.id = fs::path(image).stem().string();
    s.height = png.height;
    s.width = png.width;
    for (std::uint8_t v : png.pixels) s.image.push_back(byte_to_unit(v));
    s.mask.assign(s.image.size(), 0);
    const auto fitted = fit_to_input({s}, cfg);
    const auto masks = predict(ck.store, cfg, fitted, parse_prediction_source(source), 1);
    if (fs::path(out_file).has_parent_path()) make_dir(fs::path(out_file).parent_path());
    write_png_labels(out_file, GrayPng{cfg.input_w, cfg.input_h, masks.front()});
    out << "wrote " << out_file << "\n";
    if (!heatmap.empty()) {
      fs::path hp = heatmap_out;
      if (hp.empty()) {
        hp = out_file;
        hp.replace_filename(hp.stem().string() + "_cam.png");
      }
      write_heatmap_png(grad_cam(ck.store, cfg, fitted.front(), heatmap), hp);
      out << "wrote " << hp.string() << "\n";
    }
    return kOk;
  }
};

struct CvCmd {
  std::string data, out_dir;
  std::optional<int> folds;
  SettingsOptions so;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("cv", "k-fold cross-validation");
    c->add_option("--data", data, "dataset root")->required();
    c->add_option("--out", out_dir, "run directory")->required();
    c->add_option("--folds", folds, "fold count (overrides eval.folds)");
    so.attach(c);
  }

  int run(std::ostream& out) const {
    SettingsOptions opts = so;
    if (folds) opts.sets.push_back("eval.folds=" + std::to_string(*folds));
    const RunSettings settings = opts.resolve();
    const auto dataset = load_dataset(data, settings.model.num_classes);
    std::vector<std::string> ids;
    for (const auto& s : dataset) ids.push_back(s.id);
    const FoldSpec spec = make_folds(ids, settings.folds, settings.fold_seed);
    make_dir(out_dir);
    const fs::path dir(out_dir);
    write_text(dir / "config.txt", run_header("cv", {{"data", data}}) + settings.to_text());
    if (settings.folds == 1)
      out << "warning: with one fold the model is evaluated on its own training data\n";
    const CrossValResult r = cross_validate(dataset, spec, settings, dataset_name(data),
                                            [&](int k, const TrainLogRow& row) {
                                              out << "fold " << k << " epoch " << row.epoch << " val_loss "
                                                  << fmt(row.val_loss, "%.6f") << "\n";
                                              out.flush();
                                            });
    for (std::size_t k = 0; k < r.logs.size(); ++k) {
      std::ostringstream log;
      write_train_log(log, r.logs[k]);
      write_text(dir / ("train_log_fold" + std::to_string(k) + ".csv"), log.str());
    }
    std::ostringstream csv;
    write_metrics_csv(csv, r.folds);
    write_text(dir / "metrics.csv", csv.str());
    for (const auto& a : r.aggregate)
      out << "class " << a.cls << " dsc " << fmt(a.dsc_mean) << "±" << fmt(a.dsc_std) << " sensitivity "
          << fmt(a.sens_mean) << "±" << fmt(a.sens_std) << "\n";
    return kOk;
  }
};

struct GradCheckCmd {
  std::vector<std::string> ops;
  std::uint64_t seed = 0;
  bool list = false, inject_broken = false;

  void attach(CLI::App& app) {
    auto* c = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    c->add_option("--ops", ops, "comma-separated subset")->delimiter(',');
    c->add_option("--seed", seed, "input seed");
    c->add_flag("--list", list, "print the registered checks and exit");
    c->add_flag("--inject-broken-rule", inject_broken)->group("");
  }

  int run(std::ostream& out) const {
    if (list) {
      for (const auto& c : gradcheck_cases(inject_broken)) out << c.name << "\n";
      return kOk;
    }
    bool ok = true;
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %-5s %-5s %12s %8s %9s\n", "op", "dtype", "status", "max_rel_err",
                  "tol", "seconds");
    out << line;
    run_gradcheck_suite(ops, seed, inject_broken, [&](const GradCheckRow& r) {
      ok = ok && r.report.passed;
      std::snprintf(line, sizeof line, "%-22s %-5s %-5s %12.3e %8.0e %9.2f\n", r.name.c_str(), dtype_name(r.dtype),
                    r.report.passed ? "PASS" : "FAIL", r.report.max_rel_error, r.report.tol, r.seconds);
      out << line;
      out.flush();
    });
    out << (ok ? "all checks passed\n" : "gradient check FAILED\n");
    return ok ? kOk : kNumericError;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EDU-Net retinal fluid segmentation"};
  app.name("edunet");
  app.require_subcommand(1);
  SynthCmd synth;
  TrainCmd train_cmd;
  EvalCmd eval;
  InferCmd infer;
  CvCmd cv;
  GradCheckCmd gradcheck;
  synth.attach(app);
  train_cmd.attach(app);
  eval.attach(app);
  infer.attach(app);
  cv.attach(app);
  gradcheck.attach(app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (app.got_subcommand("synth")) return synth.run(out);
    if (app.got_subcommand("train")) return train_cmd.run(out);
    if (app.got_subcommand("eval")) return eval.run(out);
    if (app.got_subcommand("infer")) return infer.run(out);
    if (app.got_subcommand("cv")) return cv.run(out);
    if (app.got_subcommand("gradcheck")) return gradcheck.run(out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace edunet::cli
