#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "edunet/rng.hpp"
#include "edunet/tensor.hpp"

namespace edunet {

/// Unreadable or malformed dataset content.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Class labels: 0 background, 1 IRF, 2 SRF, 3 PED.
struct Sample {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<float> image;         ///< row-major, values in [0,1]
  std::vector<std::uint8_t> mask;   ///< row-major labels

  void validate(int num_classes) const;
};

/// 8-bit intensity k mapped to k/255, snapped to the f32 unit grid.
float byte_to_unit(std::uint8_t v);
std::uint8_t unit_to_byte(float v);

// PNG files. Images are 8-bit grayscale; masks are 8-bit palette-indexed (grayscale masks
// are read as label values too).
struct GrayPng {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};
GrayPng read_png_gray(const std::filesystem::path& path);
GrayPng read_png_labels(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayPng& img);
/// Indexed PNG with a fixed class palette (black, red, green, blue, then grays).
void write_png_labels(const std::filesystem::path& path, const GrayPng& labels);

Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                   int num_classes, std::string id = {});
void save_sample(const Sample& s, const std::filesystem::path& image_path,
                 const std::filesystem::path& mask_path);

/// root/images/<id>.png with root/masks/<id>.png, ordered by id.
std::vector<Sample> load_dataset(const std::filesystem::path& root, int num_classes);
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);
/// Plain-text `id,split` lines; a header line starting with "id," is skipped.
std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& path);

/// Centered square crop of side min(H,W), then resize: bilinear image, nearest mask.
Sample center_crop_resize(const Sample& s, int target_h, int target_w);
/// Top-left corner (row, col) of the centered square crop.
std::pair<int, int> center_crop_offset(int height, int width);

struct AugmentConfig {
  double hflip_prob = 0.5;
  double rotate_prob = 0.5;
  double rotate_max_deg = 15.0;
  double brightness_prob = 0.5;
  double brightness_delta = 0.2;
  double contrast_prob = 0.5;
  double contrast_delta = 0.2;

  static AugmentConfig none();
  void validate() const;
};

Sample hflip(const Sample& s);
/// Rotation about the image center with zero fill; bilinear image, nearest mask.
Sample rotate(const Sample& s, double degrees);
/// Random flip, rotation, brightness and contrast; the image is re-clamped to [0,1].
Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);

struct FoldSpec {
  int k = 5;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;

  int fold_of(const std::string& id) const;
  std::vector<std::string> ids_in_fold(int fold) const;
};

/// Sorted ids shuffled with the seed, then dealt round-robin.
FoldSpec make_folds(std::vector<std::string> ids, int k, std::uint64_t seed);

/// OCT-like B-scans: layered retinal bands with speckle, IRF as small dark ellipses in the
/// inner layers, SRF as one dark lens above the pigment epithelium, PED (when 4+ classes) as
/// a dome beneath it. Labels >= class_count are never painted.
std::vector<Sample> synth_generate(int n, int size, std::uint64_t seed, int class_count);

/// Stacks sample images into an [N,1,H,W] tensor.
Tensor images_to_tensor(const std::vector<const Sample*>& samples, DType dtype = DType::F32);

}  // namespace edunet
