#pragma once

#include <map>
#include <string>

#include "edunet/ops.hpp"
#include "edunet/param_store.hpp"
#include "edunet/rng.hpp"

namespace edunet {

/// Per-forward state shared by every block.
struct RunContext {
  bool training = false;
  /// DropPath stream. Required when training with a nonzero drop probability.
  Rng* rng = nullptr;
  /// When set, named intermediate activations are recorded here (Grad-CAM).
  std::map<std::string, Tensor>* taps = nullptr;

  void tap(const std::string& name, const Tensor& t) const {
    if (taps) (*taps)[name] = t;
  }
};

struct BlockConfig {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int expand_ratio = 1;
  int stride = 1;
  double se_ratio = 0.25;
  double drop_path_prob = 0.0;
  double layer_scale_init = 1e-6;

  void validate() const;
  int expanded_channels() const { return in_channels * expand_ratio; }
  bool has_residual() const { return stride == 1 && in_channels == out_channels; }
};

// conv / norm parameter helpers
void init_conv(const Scope& s, int cout, int cin_per_group, int kh, int kw, bool bias, Rng& rng);
void init_batch_norm(const Scope& s, int channels);
void init_layer_norm(const Scope& s, int channels);
void init_linear(const Scope& s, int cout, int cin, Rng& rng);
/// conv2d with floor-mode output extents: when the strided window does not tile the padded
/// input, trailing rows and columns that no window reaches are dropped first.
Tensor conv_floor(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt);
/// conv_floor with the scope's "weight" and optional "bias".
Tensor conv(const Tensor& x, const Scope& s, Conv2dOptions opt = {});
Tensor bn(const Tensor& x, const Scope& s, const RunContext& ctx);
Tensor ln(const Tensor& x, const Scope& s);
/// conv (no bias) -> batch norm -> activation
Tensor conv_bn_act(const Tensor& x, const Scope& s, Conv2dOptions opt, Activation act,
                   const RunContext& ctx);

/// max(1, round(channels * ratio))
int se_reduced_channels(int channels, double ratio);

/// Squeeze-and-excitation: x * sigmoid(fc2(swish(fc1(gap(x))))).
void init_se(const Scope& s, int channels, int reduced, Rng& rng);
Tensor se_block(const Tensor& x, const Scope& s);

/// Mobile inverted bottleneck: [1x1 expand+BN+swish] -> kxk depthwise+BN+swish -> SE ->
/// 1x1 project+BN, with an identity residual through DropPath when stride 1 and in == out.
void init_mbconv(const Scope& s, const BlockConfig& cfg, Rng& rng);
Tensor mbconv(const Tensor& x, const BlockConfig& cfg, const Scope& s, const RunContext& ctx);

/// Large-kernel block: x + DropPath(scale * pw2(GELU(pw1(LN(dw7x7(x)))))), MLP width 4C.
void init_lkec(const Scope& s, int channels, double layer_scale_init, Rng& rng);
Tensor lkec_block(const Tensor& x, const Scope& s, double drop_path_prob, const RunContext& ctx);

/// Channel attention (shared MLP over avg- and max-pooled descriptors) followed by spatial
/// attention (7x7 conv over channel mean and max).
void init_cbam(const Scope& s, int channels, Rng& rng, int reduction = 16, int kernel = 7);
Tensor cbam(const Tensor& x, const Scope& s);

/// Two 3x3 conv + BN + ReLU.
void init_double_conv(const Scope& s, int cin, int cout, Rng& rng);
Tensor double_conv(const Tensor& x, const Scope& s, const RunContext& ctx);

/// Stochastic depth: in training each sample's tensor is zeroed with probability `prob`
/// and survivors scaled by 1/(1-prob). Identity in eval mode or when prob == 0.
Tensor drop_path(const Tensor& x, double prob, bool training, Rng* rng);

}  // namespace edunet
