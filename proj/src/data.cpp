#include "edunet/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>

#include "edunet/pyramid.hpp"

namespace edunet {
namespace fs = std::filesystem;

void Sample::validate(int num_classes) const {
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (height < 1 || width < 1) throw DataError("sample '" + id + "': empty extents");
  if (image.size() != n || mask.size() != n)
    throw DataError("sample '" + id + "': image and mask sizes differ from extents");
  for (float v : image)
    if (!std::isfinite(v)) throw DataError("sample '" + id + "': non-finite intensity");
  for (auto l : mask)
    if (l >= num_classes)
      throw DataError("sample '" + id + "': label " + std::to_string(l) + " >= class count " +
                      std::to_string(num_classes));
}

float byte_to_unit(std::uint8_t v) {
  const double q = unit_grid_step(DType::F32);
  return static_cast<float>(std::nearbyint(v / 255.0 / q) * q);
}

std::uint8_t unit_to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

// ---------------------------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

enum class ReadMode { Gray, Labels };

GrayPng read_png(const fs::path& path, ReadMode mode) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError(path.string() + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialization failed");
  }
  GrayPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  auto reject = [&](const std::string& why) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": " + why);
  };
  if (mode == ReadMode::Labels) {
    if (color == PNG_COLOR_TYPE_PALETTE) {
      if (depth < 8) png_set_packing(png);
    } else if (color == PNG_COLOR_TYPE_GRAY) {
      if (depth == 16) reject("16-bit masks are not supported");
      if (depth < 8) png_set_packing(png);
    } else {
      reject("mask must be an indexed or grayscale PNG");
    }
  } else {
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 1) reject("unexpected channel layout");
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.pixels.resize(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[static_cast<std::size_t>(y)] = out.pixels.data() + static_cast<std::size_t>(y) * out.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const fs::path& path, const GrayPng& img, bool indexed) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height))
    throw std::invalid_argument("write_png: pixel buffer does not match extents");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  std::vector<png_color> palette(256);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, indexed ? PNG_COLOR_TYPE_PALETTE : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (indexed) {
    const png_color fixed[] = {{0, 0, 0}, {255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
    for (int i = 0; i < 256; ++i) {
      const auto g = static_cast<png_byte>(i);
      palette[static_cast<std::size_t>(i)] = i < 4 ? fixed[i] : png_color{g, g, g};
    }
    png_set_PLTE(png, info, palette.data(), 256);
  }
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data()) + static_cast<std::size_t>(y) * img.width;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayPng read_png_gray(const fs::path& path) { return read_png(path, ReadMode::Gray); }
GrayPng read_png_labels(const fs::path& path) { return read_png(path, ReadMode::Labels); }
void write_png_gray(const fs::path& path, const GrayPng& img) { write_png(path, img, false); }
void write_png_labels(const fs::path& path, const GrayPng& labels) { write_png(path, labels, true); }

Sample load_sample(const fs::path& image_path, const fs::path& mask_path, int num_classes,
                   std::string id) {
  const GrayPng img = read_png_gray(image_path);
  const GrayPng mask = read_png_labels(mask_path);
  if (img.width != mask.width || img.height != mask.height)
    throw DataError("size mismatch between " + image_path.string() + " (" +
                    std::to_string(img.width) + "x" + std::to_string(img.height) + ") and " +
                    mask_path.string() + " (" + std::to_string(mask.width) + "x" +
                    std::to_string(mask.height) + ")");
  Sample s;
  s.id = id.empty() ? image_path.stem().string() : std::move(id);
  s.height = img.height;
  s.width = img.width;
  s.image.resize(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), s.image.begin(), byte_to_unit);
  s.mask = mask.pixels;
  s.validate(num_classes);
  return s;
}

void save_sample(const Sample& s, const fs::path& image_path, const fs::path& mask_path) {
  GrayPng img{s.width, s.height, {}};
  img.pixels.resize(s.image.size());
  std::transform(s.image.begin(), s.image.end(), img.pixels.begin(), unit_to_byte);
  write_png_gray(image_path, img);
  write_png_labels(mask_path, GrayPng{s.width, s.height, s.mask});
}

std::vector<Sample> load_dataset(const fs::path& root, int num_classes) {
  const fs::path images = root / "images", masks = root / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw DataError("dataset root " + root.string() + " needs images/ and masks/ directories");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file() && e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  std::vector<Sample> out;
  for (const auto& id : ids) {
    const fs::path m = masks / (id + ".png");
    if (!fs::exists(m)) throw DataError("missing mask for '" + id + "': " + m.string());
    out.push_back(load_sample(images / (id + ".png"), m, num_classes, id));
  }
  return out;
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  std::error_code ec;
  for (const char* sub : {"images", "masks"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw DataError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
  for (const auto& s : samples)
    save_sample(s, root / "images" / (s.id + ".png"), root / "masks" / (s.id + ".png"));
}

std::vector<std::pair<std::string, std::string>> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("id,", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == line.size())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'id,split'");
    out.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// geometry

namespace {

float snap_unit(double v) {
  const double q = unit_grid_step(DType::F32);
  return static_cast<float>(std::nearbyint(std::clamp(v, 0.0, 1.0) / q) * q);
}

// Half-pixel source coordinate for output index `d` when resizing `in` -> `out`.
double source_coord(int d, int in, int out) {
  return std::max(0.0, (d + 0.5) * static_cast<double>(in) / out - 0.5);
}

}  // namespace

std::pair<int, int> center_crop_offset(int height, int width) {
  const int side = std::min(height, width);
  return {(height - side) / 2, (width - side) / 2};
}

Sample center_crop_resize(const Sample& s, int target_h, int target_w) {
  if (s.height < 1 || s.width < 1 || target_h < 1 || target_w < 1)
    throw DataError("center_crop_resize: degenerate extents");
  const int side = std::min(s.height, s.width);
  const auto [top, left] = center_crop_offset(s.height, s.width);
  Sample out;
  out.id = s.id;
  out.height = target_h;
  out.width = target_w;
  out.image.resize(static_cast<std::size_t>(target_h) * target_w);
  out.mask.resize(out.image.size());
  auto src_px = [&](int y, int x) {
    return static_cast<std::size_t>(top + y) * s.width + static_cast<std::size_t>(left + x);
  };
  if (side == target_h && side == target_w) {
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        out.image[static_cast<std::size_t>(y) * side + x] = s.image[src_px(y, x)];
        out.mask[static_cast<std::size_t>(y) * side + x] = s.mask[src_px(y, x)];
      }
    return out;
  }
  for (int y = 0; y < target_h; ++y) {
    const double sy = source_coord(y, side, target_h);
    const int y0 = std::min(static_cast<int>(sy), side - 1), y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - y0;
    const int ny = std::min(static_cast<int>((y + 0.5) * side / target_h), side - 1);
    for (int x = 0; x < target_w; ++x) {
      const double sx = source_coord(x, side, target_w);
      const int x0 = std::min(static_cast<int>(sx), side - 1), x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * s.image[src_px(y0, x0)] + fx * s.image[src_px(y0, x1)]) +
                       fy * ((1 - fx) * s.image[src_px(y1, x0)] + fx * s.image[src_px(y1, x1)]);
      const int nx = std::min(static_cast<int>((x + 0.5) * side / target_w), side - 1);
      const auto o = static_cast<std::size_t>(y) * target_w + x;
      out.image[o] = snap_unit(v);
      out.mask[o] = s.mask[src_px(ny, nx)];
    }
  }
  return out;
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.hflip_prob = c.rotate_prob = c.brightness_prob = c.contrast_prob = 0.0;
  return c;
}

void AugmentConfig::validate() const {
  for (double p : {hflip_prob, rotate_prob, brightness_prob, contrast_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augment: probabilities must be in [0,1]");
  if (!(rotate_max_deg >= 0.0)) throw std::invalid_argument("augment: rotate_max_deg must be >= 0");
  if (!(brightness_delta >= 0.0) || !(contrast_delta >= 0.0))
    throw std::invalid_argument("augment: deltas must be >= 0");
}

Sample hflip(const Sample& s) {
  Sample out = s;
  for (int y = 0; y < s.height; ++y) {
    const auto row = static_cast<std::size_t>(y) * s.width;
    std::reverse(out.image.begin() + static_cast<std::ptrdiff_t>(row),
                 out.image.begin() + static_cast<std::ptrdiff_t>(row + s.width));
    std::reverse(out.mask.begin() + static_cast<std::ptrdiff_t>(row),
                 out.mask.begin() + static_cast<std::ptrdiff_t>(row + s.width));
  }
  return out;
}

Sample rotate(const Sample& s, double degrees) {
  if (degrees == 0.0) return s;
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  const double cy = (s.height - 1) / 2.0, cx = (s.width - 1) / 2.0;
  Sample out = s;
  auto pix = [&](int y, int x) -> double {
    if (y < 0 || y >= s.height || x < 0 || x >= s.width) return 0.0;
    return s.image[static_cast<std::size_t>(y) * s.width + x];
  };
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      // inverse map: output pixel -> source position
      const double dy = y - cy, dx = x - cx;
      const double sy = cy + c * dy - sn * dx;
      const double sx = cx + sn * dy + c * dx;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * pix(y0, x0) + fx * pix(y0, x0 + 1)) +
                       fy * ((1 - fx) * pix(y0 + 1, x0) + fx * pix(y0 + 1, x0 + 1));
      const auto o = static_cast<std::size_t>(y) * s.width + x;
      out.image[o] = snap_unit(v);
      const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
      out.mask[o] = (ny < 0 || ny >= s.height || nx < 0 || nx >= s.width)
                        ? 0
                        : s.mask[static_cast<std::size_t>(ny) * s.width + nx];
    }
  return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  // Every draw happens unconditionally so the stream position does not depend on outcomes.
  const bool flip = rng.bernoulli(cfg.hflip_prob);
  const bool rot = rng.bernoulli(cfg.rotate_prob);
  const double angle = rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg);
  const bool bright = rng.bernoulli(cfg.brightness_prob);
  const double shift = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
  const bool contrast = rng.bernoulli(cfg.contrast_prob);
  const double factor = rng.uniform(1.0 - cfg.contrast_delta, 1.0 + cfg.contrast_delta);

  Sample out = flip ? hflip(s) : s;
  if (rot) out = rotate(out, angle);
  if (bright || contrast) {
    double mean = 0;
    for (float v : out.image) mean += v;
    mean /= static_cast<double>(out.image.size());
    const double offset = bright ? shift : 0.0;
    const double center = mean + offset;
    for (auto& v : out.image) {
      double x = v + offset;
      if (contrast) x = (x - center) * factor + center;
      v = snap_unit(x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// folds

int FoldSpec::fold_of(const std::string& id) const {
  auto it = assignment.find(id);
  if (it == assignment.end()) throw std::out_of_range("fold: unknown id '" + id + "'");
  return it->second;
}

std::vector<std::string> FoldSpec::ids_in_fold(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f == fold) out.push_back(id);
  return out;
}

FoldSpec make_folds(std::vector<std::string> ids, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("make_folds: k must be >= 1");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("make_folds: duplicate ids");
  Rng rng = Rng(seed).fork("folds");
  rng.shuffle(ids);
  FoldSpec spec;
  spec.k = k;
  spec.seed = seed;
  for (std::size_t i = 0; i < ids.size(); ++i) spec.assignment[ids[i]] = static_cast<int>(i % k);
  return spec;
}

// ---------------------------------------------------------------------------------------------
// synthetic B-scans

namespace {

// Layer boundaries as fractions of retinal thickness, with band intensities between them.
constexpr double kBounds[] = {0.0, 0.12, 0.26, 0.38, 0.46, 0.68, 0.76, 0.86};
constexpr double kBands[] = {0.70, 0.45, 0.30, 0.55, 0.25, 0.80, 0.92};
constexpr double kVitreous = 0.04, kChoroid = 0.35, kFluid = 0.05, kPed = 0.15;

Sample synth_one(int size, Rng rng, int class_count, const std::string& id) {
  const double s = size;
  const double top0 = s * rng.uniform(0.22, 0.30);
  const double amp = s * rng.uniform(0.0, 0.04);
  const double freq = rng.uniform(0.5, 1.5), phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double thick = s * rng.uniform(0.40, 0.46);
  auto top = [&](double x) { return top0 + amp * std::sin(2 * std::numbers::pi * freq * x / s + phase); };

  Sample out;
  out.id = id;
  out.height = out.width = size;
  std::vector<double> img(static_cast<std::size_t>(size) * size);
  out.mask.assign(img.size(), 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double depth = (y + 0.5 - top(x + 0.5)) / thick;
      double v = depth < 0 ? kVitreous : kChoroid;
      for (int b = 0; b < 7; ++b)
        if (depth >= kBounds[b] && depth < kBounds[b + 1]) v = kBands[b];
      img[static_cast<std::size_t>(y) * size + x] = v;
    }
  auto paint = [&](auto&& inside, double value, std::uint8_t label) {
    if (label >= class_count) return;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (inside(x + 0.5, y + 0.5)) {
          img[static_cast<std::size_t>(y) * size + x] = value;
          out.mask[static_cast<std::size_t>(y) * size + x] = label;
        }
  };

  // IRF: a few small cysts in the inner nuclear / outer nuclear layers.
  const int cysts = 2 + static_cast<int>(rng.below(4));
  for (int i = 0; i < cysts; ++i) {
    const double cx = s * rng.uniform(0.15, 0.85);
    const double cy = top(cx) + thick * rng.uniform(0.34, 0.60);
    const double rx = s * rng.uniform(0.03, 0.06), ry = s * rng.uniform(0.025, 0.05);
    const double ang = rng.uniform(0.0, std::numbers::pi);
    paint([&](double x, double y) {
      const double dx = x - cx, dy = y - cy;
      const double u = dx * std::cos(ang) + dy * std::sin(ang), w = -dx * std::sin(ang) + dy * std::cos(ang);
      return (u * u) / (rx * rx) + (w * w) / (ry * ry) <= 1.0;
    }, kFluid, 1);
  }

  // SRF: one lens between the photoreceptor band and the pigment epithelium.
  {
    const double cx = s * rng.uniform(0.35, 0.65);
    const double half = s * rng.uniform(0.14, 0.22), height = s * rng.uniform(0.07, 0.11);
    paint([&](double x, double y) {
      const double t = (x - cx) / half;
      if (std::fabs(t) >= 1) return false;
      const double base = top(x) + thick * kBounds[6];
      return y <= base && y >= base - height * (1 - t * t);
    }, kFluid, 2);
  }

  // PED: a dome under the pigment epithelium, in about half of the scans.
  if (rng.bernoulli(0.5)) {
    const double cx = s * rng.uniform(0.3, 0.7);
    const double half = s * rng.uniform(0.08, 0.14), height = s * rng.uniform(0.05, 0.08);
    paint([&](double x, double y) {
      const double t = (x - cx) / half;
      if (std::fabs(t) >= 1) return false;
      const double base = top(x) + thick * kBounds[7];
      return y >= base && y <= base + height * std::sqrt(1 - t * t);
    }, kPed, 3);
  }

  out.image.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double speckled = std::clamp(img[i] * (1.0 + 0.15 * rng.normal()), 0.0, 1.0);
    out.image[i] = byte_to_unit(unit_to_byte(static_cast<float>(speckled)));
  }
  return out;
}

}  // namespace

std::vector<Sample> synth_generate(int n, int size, std::uint64_t seed, int class_count) {
  if (n < 0) throw std::invalid_argument("synth: n must be >= 0");
  if (size < 32) throw std::invalid_argument("synth: size must be >= 32, got " + std::to_string(size));
  if (class_count < 2 || class_count > 255) throw std::invalid_argument("synth: class_count must be in [2,255]");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  const Rng base = Rng(seed).fork("synth");
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04d", i);
    out.push_back(synth_one(size, base.fork(static_cast<std::uint64_t>(i)), class_count, id));
  }
  return out;
}

Tensor images_to_tensor(const std::vector<const Sample*>& samples, DType dtype) {
  if (samples.empty()) throw std::invalid_argument("images_to_tensor: no samples");
  const int h = samples[0]->height, w = samples[0]->width;
  Tensor t = Tensor::zeros({static_cast<std::int64_t>(samples.size()), 1, h, w}, dtype);
  auto& b = t.mutable_buffer();
  std::size_t o = 0;
  for (const Sample* s : samples) {
    if (s->height != h || s->width != w) throw ShapeError("images_to_tensor: mixed extents");
    for (float v : s->image) b.set(o++, v);
  }
  return t;
}

}  // namespace edunet
