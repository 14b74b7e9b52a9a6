#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

#include "doctest.h"
#include "edunet/data.hpp"
#include "edunet/pyramid.hpp"
#include "test_util.hpp"

using namespace edunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("edunet_data_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
            std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Sample make_sample(int h, int w, std::uint8_t label = 0) {
  Sample s;
  s.id = "s";
  s.height = h;
  s.width = w;
  s.image.assign(static_cast<std::size_t>(h) * w, 0.0f);
  s.mask.assign(s.image.size(), label);
  return s;
}

Sample ramp_sample(int h, int w) {
  Sample s = make_sample(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      s.image[static_cast<std::size_t>(y) * w + x] = byte_to_unit(static_cast<std::uint8_t>((y * 7 + x * 3) % 256));
      s.mask[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>((y / 5 + x / 7) % 4);
    }
  return s;
}

std::set<std::uint8_t> label_set(const Sample& s) { return {s.mask.begin(), s.mask.end()}; }

// 4-connected component areas of one label.
std::vector<int> component_areas(const Sample& s, std::uint8_t label) {
  std::vector<int> areas;
  std::vector<char> seen(s.mask.size(), 0);
  for (std::size_t start = 0; start < s.mask.size(); ++start) {
    if (seen[start] || s.mask[start] != label) continue;
    int area = 0;
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      ++area;
      const int y = static_cast<int>(p / s.width), x = static_cast<int>(p % s.width);
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto& n : nb) {
        if (n[0] < 0 || n[0] >= s.height || n[1] < 0 || n[1] >= s.width) continue;
        const std::size_t o = static_cast<std::size_t>(n[0]) * s.width + n[1];
        if (!seen[o] && s.mask[o] == label) {
          seen[o] = 1;
          q.push(o);
        }
      }
    }
    areas.push_back(area);
  }
  return areas;
}

}  // namespace

TEST_CASE("intensity scaling") {
  CHECK(byte_to_unit(0) == 0.0f);
  CHECK(byte_to_unit(255) == 1.0f);
  for (int v = 0; v < 256; ++v) {
    CHECK(std::fabs(byte_to_unit(static_cast<std::uint8_t>(v)) - v / 255.0) <= 3e-8);
    CHECK(unit_to_byte(byte_to_unit(static_cast<std::uint8_t>(v))) == v);
  }
}

TEST_CASE("png sample round trips") {
  TempDir tmp;
  SUBCASE("all-zero files") {
    save_sample(make_sample(5, 7), tmp.path / "i.png", tmp.path / "m.png");
    Sample s = load_sample(tmp.path / "i.png", tmp.path / "m.png", 4);
    CHECK(s.height == 5);
    CHECK(s.width == 7);
    CHECK(s.id == "i");
    for (float v : s.image) CHECK(v == 0.0f);
    for (auto l : s.mask) CHECK(l == 0);
  }
  SUBCASE("full-scale pixel and exact synthetic round trip") {
    Sample white = make_sample(3, 3);
    white.image.assign(9, 1.0f);
    save_sample(white, tmp.path / "w.png", tmp.path / "wm.png");
    CHECK(load_sample(tmp.path / "w.png", tmp.path / "wm.png", 2).image[4] == 1.0f);

    for (const Sample& s : synth_generate(3, 48, 7, 4)) {
      save_sample(s, tmp.path / (s.id + ".png"), tmp.path / (s.id + "_m.png"));
      Sample back = load_sample(tmp.path / (s.id + ".png"), tmp.path / (s.id + "_m.png"), 4, s.id);
      CHECK(back.image == s.image);
      CHECK(back.mask == s.mask);
    }
  }
  SUBCASE("errors") {
    save_sample(make_sample(4, 4, 3), tmp.path / "a.png", tmp.path / "am.png");
    save_sample(make_sample(4, 5), tmp.path / "b.png", tmp.path / "bm.png");
    CHECK_THROWS_AS(load_sample(tmp.path / "a.png", tmp.path / "am.png", 3), DataError);
    CHECK_NOTHROW(load_sample(tmp.path / "a.png", tmp.path / "am.png", 4));
    CHECK_THROWS_AS(load_sample(tmp.path / "a.png", tmp.path / "bm.png", 4), DataError);
    CHECK_THROWS_AS(load_sample(tmp.path / "missing.png", tmp.path / "am.png", 4), DataError);
    std::ofstream(tmp.path / "junk.png") << "not a png at all";
    CHECK_THROWS_AS(load_sample(tmp.path / "junk.png", tmp.path / "am.png", 4), DataError);
    // Grayscale PNGs are valid label maps.
    CHECK_NOTHROW(read_png_labels(tmp.path / "a.png"));
  }
  SUBCASE("dataset layout and manifest") {
    auto samples = synth_generate(4, 32, 3, 3);
    save_dataset(tmp.path / "ds", samples);
    auto loaded = load_dataset(tmp.path / "ds", 3);
    REQUIRE(loaded.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(loaded[i].id == samples[i].id);
      CHECK(loaded[i].mask == samples[i].mask);
    }
    fs::remove(tmp.path / "ds" / "masks" / (samples[2].id + ".png"));
    CHECK_THROWS_AS(load_dataset(tmp.path / "ds", 3), DataError);
    CHECK_THROWS_AS(load_dataset(tmp.path / "nowhere", 3), DataError);

    std::ofstream(tmp.path / "split.csv") << "id,split\na,train\r\nb,test\n\n";
    auto m = read_manifest(tmp.path / "split.csv");
    REQUIRE(m.size() == 2);
    CHECK(m[1] == std::pair<std::string, std::string>{"b", "test"});
    std::ofstream(tmp.path / "bad.csv") << "a;train\n";
    CHECK_THROWS_AS(read_manifest(tmp.path / "bad.csv"), DataError);
  }
}

TEST_CASE("center crop and resize") {
  Sample sq = ramp_sample(16, 16);
  Sample same = center_crop_resize(sq, 16, 16);
  CHECK(same.image == sq.image);
  CHECK(same.mask == sq.mask);

  CHECK(center_crop_offset(100, 60) == std::pair<int, int>{20, 0});
  CHECK(center_crop_offset(60, 100) == std::pair<int, int>{0, 20});
  Sample tall = ramp_sample(100, 60);
  Sample crop = center_crop_resize(tall, 60, 60);
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 60; ++x) {
      CHECK(crop.image[y * 60 + x] == tall.image[(y + 20) * 60 + x]);
      CHECK(crop.mask[y * 60 + x] == tall.mask[(y + 20) * 60 + x]);
    }

  // Halving with half-pixel bilinear averages each 2x2 block.
  Sample half = center_crop_resize(tall, 30, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 30; ++x) {
      double avg = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) avg += crop.image[(2 * y + dy) * 60 + 2 * x + dx];
      CHECK(std::fabs(half.image[y * 30 + x] - avg / 4) <= 1e-6);
    }
  Sample up = center_crop_resize(tall, 128, 128);
  CHECK(up.height == 128);
  const auto before = label_set(tall), after = label_set(up);
  CHECK(std::includes(before.begin(), before.end(), after.begin(), after.end()));
  CHECK_THROWS_AS(center_crop_resize(tall, 0, 10), DataError);
}

TEST_CASE("augmentation") {
  Sample s = ramp_sample(21, 21);
  Rng rng(5);
  Sample same = augment(s, AugmentConfig::none(), rng);
  CHECK(same.image == s.image);
  CHECK(same.mask == s.mask);

  Sample twice = hflip(hflip(s));
  CHECK(twice.image == s.image);
  CHECK(twice.mask == s.mask);
  CHECK(hflip(s).image[0] == s.image[20]);

  Sample r0 = rotate(s, 0.0);
  for (std::size_t i = 0; i < s.image.size(); ++i) CHECK(std::fabs(r0.image[i] - s.image[i]) <= 1e-6);
  // A quarter turn of an odd-sized square is a pixel permutation.
  Sample r90 = rotate(s, 90.0);
  Sample r360 = rotate(rotate(r90, 90.0), 180.0);
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    CHECK(std::fabs(r360.image[i] - s.image[i]) <= 1e-6);
    CHECK(r360.mask[i] == s.mask[i]);
  }

  AugmentConfig cfg;
  cfg.hflip_prob = cfg.rotate_prob = cfg.brightness_prob = cfg.contrast_prob = 1.0;
  const auto labels = label_set(s);
  for (int t = 0; t < 20; ++t) {
    Sample a = augment(s, cfg, rng);
    for (float v : a.image) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    const auto got = label_set(a);
    CHECK(std::includes(labels.begin(), labels.end(), got.begin(), got.end()));
  }
  Rng a(9), b(9);
  CHECK(augment(s, AugmentConfig{}, a).image == augment(s, AugmentConfig{}, b).image);

  AugmentConfig bad;
  bad.hflip_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = AugmentConfig{};
  bad.rotate_max_deg = -1;
  CHECK_THROWS_AS(augment(s, bad, rng), std::invalid_argument);
}

TEST_CASE("fold assignment") {
  std::vector<std::string> ids;
  for (int i = 0; i < 23; ++i) ids.push_back("id" + std::to_string(i));
  FoldSpec f = make_folds(ids, 5, 3);
  std::vector<int> sizes;
  for (int k = 0; k < 5; ++k) sizes.push_back(static_cast<int>(f.ids_in_fold(k).size()));
  CHECK(sizes == std::vector<int>{5, 5, 5, 4, 4});
  CHECK(f.assignment.size() == 23);

  std::vector<std::string> reversed(ids.rbegin(), ids.rend());
  CHECK(make_folds(reversed, 5, 3).assignment == f.assignment);
  CHECK(make_folds(ids, 5, 4).assignment != f.assignment);

  FoldSpec one = make_folds(ids, 1, 9);
  for (const auto& [id, k] : one.assignment) CHECK(k == 0);
  CHECK_THROWS_AS(make_folds(ids, 0, 1), std::invalid_argument);
  ids.push_back("id3");
  CHECK_THROWS_AS(make_folds(ids, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(f.fold_of("nope"), std::out_of_range);
}

TEST_CASE("synthetic generator") {
  CHECK(synth_generate(0, 64, 1, 3).empty());
  CHECK_THROWS_AS(synth_generate(1, 31, 1, 3), std::invalid_argument);

  for (int c : {2, 3, 4}) {
    for (const Sample& s : synth_generate(10, 48, 11, c)) {
      CHECK_NOTHROW(s.validate(c));
      for (auto l : s.mask) CHECK(l < c);
      CHECK(std::count(s.mask.begin(), s.mask.end(), 1) > 0);
      if (c >= 3) CHECK(std::count(s.mask.begin(), s.mask.end(), 2) > 0);
    }
  }
  const auto a = synth_generate(3, 64, 5, 4), b = synth_generate(3, 64, 5, 4);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
  }
  CHECK(synth_generate(1, 64, 6, 4)[0].image != a[0].image);

  double irf_total = 0, srf_total = 0;
  int irf_count = 0, srf_count = 0;
  const auto corpus = synth_generate(100, 64, 21, 3);
  double level_mean_max = 0;
  for (const Sample& s : corpus) {
    for (int area : component_areas(s, 1)) {
      irf_total += area;
      ++irf_count;
    }
    for (int area : component_areas(s, 2)) {
      srf_total += area;
      ++srf_count;
    }
  }
  REQUIRE(irf_count > 0);
  REQUIRE(srf_count > 0);
  CHECK(irf_total / irf_count < srf_total / srf_count);

  // High-frequency levels of natural-looking scans are roughly zero-mean.
  for (int i = 0; i < 20; ++i) {
    const Sample* s = &corpus[static_cast<std::size_t>(i)];
    HighFreqPyramid p = build_pyramid(images_to_tensor({s}), 4);
    for (const auto& level : p.levels) {
      double m = 0;
      for (std::int64_t j = 0; j < level.numel(); ++j) m += level.at(j);
      level_mean_max = std::max(level_mean_max, std::fabs(m / static_cast<double>(level.numel())));
    }
  }
  CHECK(level_mean_max < 0.02);
}

TEST_CASE("images_to_tensor") {
  Sample s = ramp_sample(4, 6), t = ramp_sample(4, 6);
  Tensor x = images_to_tensor({&s, &t});
  CHECK(x.shape() == Shape{2, 1, 4, 6});
  CHECK(x.at(24 + 5) == s.image[5]);
  Sample u = ramp_sample(4, 5);
  CHECK_THROWS_AS(images_to_tensor({&s, &u}), ShapeError);
}
