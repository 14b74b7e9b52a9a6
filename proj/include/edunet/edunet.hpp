#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "edunet/blocks.hpp"
#include "edunet/pyramid.hpp"

namespace edunet {

enum class Profile { Tiny, B0 };
enum class FgAttention { Mean, OneMinusBg };

Profile parse_profile(std::string_view s);
const char* profile_name(Profile p);
FgAttention parse_fg_attention(std::string_view s);
const char* fg_attention_name(FgAttention m);

/// One stage of the local (MBConv) encoder.
struct StageSpec {
  int expand_ratio;
  int kernel;
  int channels;
  int repeats;
  int stride;
};

struct EDUNetConfig {
  int num_classes = 4;
  int input_h = 64;
  int input_w = 64;
  Profile profile = Profile::Tiny;
  std::vector<int> global_channels{24, 48, 96, 192};
  std::vector<int> lkec_blocks{1, 1, 1, 1};
  int stem_kernel = 4;
  int stem_stride = 2;
  FgAttention fg_attention = FgAttention::Mean;
  bool use_global = true;
  bool use_local = true;
  bool use_mcega = true;
  double drop_path_max = 0.0;
  double layer_scale_init = 1e-6;
  double blur_sigma = 1.0;
  int blur_kernel_size = 5;

  static EDUNetConfig tiny(int num_classes = 4);
  static EDUNetConfig b0(int num_classes = 4);

  void validate() const;
  int num_global_stages() const { return static_cast<int>(global_channels.size()); }
  /// Input extents must be multiples of this.
  int required_divisor() const;
  int local_stem_channels() const;
  int local_decoder_min_channels() const;
  std::vector<StageSpec> local_stages() const;
  /// Number of stride-2 reductions in the local encoder (stem included).
  int local_downsamplings() const;
};

/// Allocates every parameter reachable under `cfg` into `store`.
void init_edunet(ParamStore& store, const EDUNetConfig& cfg, Rng& rng);

struct LocalBranchOutput {
  Tensor logits;
  /// Last encoder feature at each reduced resolution, shallow to deep (the last entry is
  /// the bottleneck).
  std::vector<Tensor> skips;
};

LocalBranchOutput local_branch_forward(const Tensor& image, const EDUNetConfig& cfg,
                                       const Scope& s, const RunContext& ctx);

/// Stage outputs, shallow to deep.
std::vector<Tensor> global_encoder_forward(const Tensor& image, const EDUNetConfig& cfg,
                                           const Scope& s, const RunContext& ctx);

/// 3x3 conv to max(in/4, C) channels, GELU, then 1x1 conv to C class logits.
void init_coarse_head(const Scope& s, int in_channels, int num_classes, Rng& rng);
Tensor coarse_head(const Tensor& feature, const Scope& s);

struct MCEGAInputs {
  Tensor encoder_feature;  ///< [N, Ni, Hi, Wi]
  Tensor high_freq;        ///< [N, 1, h, w]
  Tensor coarse_logits;    ///< [N, C, h', w']
};

struct ClassAttention {
  Tensor background;  ///< [N,1,Hi,Wi]
  Tensor foreground;  ///< [N,1,Hi,Wi]
};

/// Softmax of the coarse logits resized to (h, w), split into background and foreground maps.
ClassAttention class_attention(const Tensor& coarse_logits, std::int64_t h, std::int64_t w,
                               FgAttention mode);

void init_mc_ega(const Scope& s, int channels, Rng& rng);
/// out = CBAM(f + G(concat(f*A_bg, f*A_fg, f*A_edge))), G(X) = sigmoid(conv3x3(X)) * conv1x1(X).
Tensor mc_ega(const MCEGAInputs& in, const Scope& s, int num_classes, FgAttention mode);

Tensor global_decoder_forward(const std::vector<Tensor>& features, const HighFreqPyramid& pyramid,
                              const EDUNetConfig& cfg, const Scope& s, const RunContext& ctx);

struct EDUNetOutput {
  Tensor logits_global;  ///< undefined when the global branch is disabled
  Tensor logits_local;   ///< undefined when the local branch is disabled
  Tensor fused_prob;     ///< mean of the enabled branches' softmax
};

EDUNetOutput edunet_forward(const Tensor& image, const EDUNetConfig& cfg, ParamStore& store,
                            const RunContext& ctx);

/// Mean of per-branch softmax probabilities over the class axis.
Tensor fuse_probabilities(const std::vector<Tensor>& logits);

/// Per-pixel argmax over classes: [N,C,H,W] -> N masks of H*W labels.
std::vector<std::vector<std::uint8_t>> argmax_masks(const Tensor& prob);

}  // namespace edunet
