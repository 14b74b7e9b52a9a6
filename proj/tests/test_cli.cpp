#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "edunet/checkpoint.hpp"
#include "edunet/config.hpp"
#include "edunet/data.hpp"

using namespace edunet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = edunet::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "edunet_cli_test" / name;
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kTiny = {"--set", "model.profile=tiny", "--set", "model.num_classes=3",
                                        "--set", "model.input_h=32",   "--set", "model.input_w=32",
                                        "--set", "train.max_epochs=2", "--set", "train.lr=0.01"};

std::vector<std::string> train_args(const fs::path& data, const fs::path& out,
                                    std::vector<std::string> extra = {}) {
  std::vector<std::string> a = {"train", "--data", data.string(), "--out", out.string()};
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

fs::path small_dataset() {
  static const fs::path data = [] {
    const fs::path d = scratch("data");
    REQUIRE(run_cli({"synth", "--out", d.string(), "--n", "4", "--size", "32", "--seed", "5", "--classes", "3"}).code == 0);
    return d;
  }();
  return data;
}

}  // namespace

TEST_CASE("cli: usage errors and help") {
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"nonsense"}).code == 1);
  CHECK(run_cli({"synth"}).code == 1);  // --out is required
  const Result r = run_cli(train_args(small_dataset(), scratch("conflict"), {"--global-only", "--local-only"}));
  CHECK(r.code == 1);
  CHECK(r.err.find("excludes") != std::string::npos);
  CHECK_FALSE(fs::exists(scratch("conflict")));
  CHECK(run_cli(train_args(small_dataset(), scratch("badkey"), {"--set", "model.nope=1"})).code == 1);
  CHECK(run_cli(train_args(small_dataset(), scratch("badset"), {"--set", "train.lr"})).code == 1);
}

TEST_CASE("cli synth: layout, determinism and round trip") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b"), empty = scratch("synth_empty");
  const std::vector<std::string> args = {"--n", "8", "--size", "64", "--seed", "11", "--classes", "3"};
  auto with_out = [&](const fs::path& p) {
    std::vector<std::string> v = {"synth", "--out", p.string()};
    v.insert(v.end(), args.begin(), args.end());
    return v;
  };
  REQUIRE(run_cli(with_out(a)).code == 0);
  REQUIRE(run_cli(with_out(b)).code == 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 17);  // 8 images, 8 masks, config
  const auto ds = load_dataset(a, 3);
  REQUIRE(ds.size() == 8);
  for (const auto& s : ds) {
    CHECK(s.height == 64);
    CHECK(s.width == 64);
  }
  REQUIRE(run_cli({"synth", "--out", empty.string(), "--n", "0"}).code == 0);
  CHECK(fs::is_directory(empty / "images"));
  CHECK(fs::is_directory(empty / "masks"));
  CHECK(fs::is_empty(empty / "images"));
  CHECK(run_cli({"synth", "--out", scratch("synth_small").string(), "--size", "16"}).code == 1);
}

TEST_CASE("cli train: artifacts, ablation flags and reproducibility") {
  const fs::path data = small_dataset();
  const fs::path run1 = scratch("run1"), run2 = scratch("run2"), run3 = scratch("run3");
  REQUIRE(run_cli(train_args(data, run1)).code == 0);
  for (const char* f : {"best.ckpt", "last.ckpt", "train_log.csv", "config.txt"}) CHECK(fs::exists(run1 / f));
  CHECK(slurp(run1 / "train_log.csv").rfind("epoch,train_loss,val_loss,lr\n", 0) == 0);

  const RunSettings resolved = RunSettings::from_pairs(read_config_file(run1 / "config.txt"));
  CHECK(resolved.model.use_global);
  CHECK(resolved.model.use_local);
  CHECK(resolved.model.use_mcega);
  CHECK(resolved.train.max_epochs == 2);

  // Same settings again, and once more from the written config alone.
  REQUIRE(run_cli(train_args(data, run2)).code == 0);
  CHECK(slurp(run1 / "train_log.csv") == slurp(run2 / "train_log.csv"));
  CHECK(slurp(run1 / "best.ckpt") == slurp(run2 / "best.ckpt"));
  REQUIRE(run_cli({"train", "--data", data.string(), "--out", run3.string(), "--config",
               (run1 / "config.txt").string()})
              .code == 0);
  CHECK(slurp(run1 / "train_log.csv") == slurp(run3 / "train_log.csv"));

  const fs::path g = scratch("global_only"), l = scratch("local_only"), n = scratch("no_mcega");
  REQUIRE(run_cli(train_args(data, g, {"--global-only"})).code == 0);
  REQUIRE(run_cli(train_args(data, l, {"--local-only"})).code == 0);
  REQUIRE(run_cli(train_args(data, n, {"--no-mcega", "--seed", "9"})).code == 0);
  CHECK_FALSE(load_checkpoint(g / "best.ckpt").settings.model.use_local);
  CHECK_FALSE(load_checkpoint(l / "best.ckpt").settings.model.use_global);
  const Checkpoint nm = load_checkpoint(n / "best.ckpt");
  CHECK_FALSE(nm.settings.model.use_mcega);
  CHECK(nm.settings.train.seed == 9);
  CHECK(slurp(run1 / "train_log.csv") != slurp(n / "train_log.csv"));

  CHECK(run_cli(train_args(data, scratch("badfold"), {"--fold", "7"})).code == 1);
  CHECK(run_cli(train_args(scratch("nowhere"), scratch("nodata"))).code == 2);
  CHECK(run_cli(train_args(data, scratch("diverge"), {"--set", "train.lr=1e30"})).code == 3);
}

TEST_CASE("cli eval: CSV contract and failures") {
  const fs::path data = small_dataset(), run = scratch("eval_run");
  REQUIRE(run_cli(train_args(data, run)).code == 0);
  const std::string ckpt = (run / "best.ckpt").string();

  const Result r = run_cli({"eval", "--ckpt", ckpt, "--data", data.string()});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  REQUIRE(rows.size() == 1 + 2 + 2);  // header, classes 1-2, aggregate per class
  CHECK(rows[0] == "dataset,fold,class,dsc,sensitivity,tp,fn,fp");
  CHECK(rows[1].rfind("data,0,1,", 0) == 0);
  for (const auto& row : rows) CHECK(std::count(row.begin(), row.end(), ',') == 7);

  const fs::path csv = scratch("eval_out") / "m.csv";
  const Result f = run_cli({"eval", "--ckpt", ckpt, "--data", data.string(), "--folds", "2", "--out", csv.string(),
                        "--source", "global", "--pooled"});
  REQUIRE(f.code == 0);
  CHECK(f.out.find("class 1 dsc") != std::string::npos);
  const std::string text = slurp(csv);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 2 + 2);

  const Result missing = run_cli({"eval", "--ckpt", (run / "nope.ckpt").string(), "--data", data.string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nope.ckpt") != std::string::npos);
  CHECK(run_cli({"eval", "--ckpt", ckpt, "--data", data.string(), "--source", "both"}).code == 1);

  const fs::path junk = scratch("junk") / "junk.ckpt";
  fs::create_directories(junk.parent_path());
  std::ofstream(junk) << "not a checkpoint";
  CHECK(run_cli({"eval", "--ckpt", junk.string(), "--data", data.string()}).code == 2);
}

TEST_CASE("cli infer: indexed mask, repeatable output, heatmap") {
  const fs::path data = small_dataset(), run = scratch("infer_run"), out = scratch("infer_out");
  REQUIRE(run_cli(train_args(data, run)).code == 0);
  const std::string ckpt = (run / "best.ckpt").string();
  const std::string image = (data / "images" / "synth_0000.png").string();
  const fs::path m1 = out / "a.png", m2 = out / "b.png";
  REQUIRE(run_cli({"infer", "--ckpt", ckpt, "--image", image, "--out", m1.string()}).code == 0);
  REQUIRE(run_cli({"infer", "--ckpt", ckpt, "--image", image, "--out", m2.string(), "--heatmap", "local.dec.1"}).code ==
          0);
  CHECK(slurp(m1) == slurp(m2));
  const std::string bytes = slurp(m1);
  REQUIRE(bytes.size() > 26);
  CHECK(static_cast<int>(bytes[24]) == 8);  // bit depth
  CHECK(static_cast<int>(bytes[25]) == 3);  // palette color type
  const GrayPng labels = read_png_labels(m1);
  CHECK(labels.width == 32);
  CHECK(labels.height == 32);
  for (auto v : labels.pixels) CHECK(v < 3);

  const GrayPng cam = read_png_gray(out / "b_cam.png");
  CHECK(cam.width == 32);
  const auto [lo, hi] = std::minmax_element(cam.pixels.begin(), cam.pixels.end());
  CHECK(*lo < *hi);

  CHECK(run_cli({"infer", "--ckpt", ckpt, "--image", image, "--out", m1.string(), "--heatmap", "x.y"}).code == 1);
  CHECK(run_cli({"infer", "--ckpt", ckpt, "--image", (out / "none.png").string(), "--out", m1.string()}).code == 2);
}

TEST_CASE("cli cv: per-fold logs and metrics") {
  const fs::path data = small_dataset(), out = scratch("cv");
  std::vector<std::string> a = {"cv", "--data", data.string(), "--out", out.string(), "--folds", "2"};
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  REQUIRE(run_cli(a).code == 0);
  for (const char* f : {"metrics.csv", "train_log_fold0.csv", "train_log_fold1.csv", "config.txt"})
    CHECK(fs::exists(out / f));
  CHECK(RunSettings::from_pairs(read_config_file(out / "config.txt")).folds == 2);
}

TEST_CASE("cli gradcheck: exit status follows the results") {
  const Result ok = run_cli({"gradcheck", "--ops", "relu,conv2d", "--seed", "4"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("conv2d") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  const Result bad = run_cli({"gradcheck", "--ops", "relu,broken_rule", "--inject-broken-rule"});
  CHECK(bad.code == 3);
  CHECK(bad.out.find("FAIL") != std::string::npos);
  CHECK(run_cli({"gradcheck", "--ops", "not_an_op"}).code == 1);
  const Result list = run_cli({"gradcheck", "--list"});
  CHECK(list.out.find("edunet_forward") != std::string::npos);
  CHECK(list.out.find("broken_rule") == std::string::npos);
}
