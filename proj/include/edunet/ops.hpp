#pragma once

#include <string_view>
#include <vector>

#include "edunet/tensor.hpp"

// Differentiable primitives. Image tensors are NCHW. Every op records a backward rule when
// any input requires grad; inputs must share one dtype.
namespace edunet {

enum class Activation { ReLU, GELU, Swish, Sigmoid };
enum class PoolKind { GlobalAvg, GlobalMax, Avg2x2 };
enum class ChannelReduce { Mean, Max };

Activation parse_activation(std::string_view name);
const char* activation_name(Activation kind);

// elementwise arithmetic with numpy-style broadcasting
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
/// s - a
Tensor rsub_scalar(double s, const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return rsub_scalar(s, a); }

Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& xs, int axis = 1);
/// Half-open range [start, end) along `axis`.
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end);

Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::ReLU); }
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline Tensor gelu(const Tensor& x) { return activation(x, Activation::GELU); }
inline Tensor swish(const Tensor& x) { return activation(x, Activation::Swish); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::Sigmoid); }

Tensor softmax(const Tensor& x, int axis = 1);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Zero-padded 2-D cross-correlation. weight: [Cout, Cin/groups, kH, kW]; bias optional.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});
/// Direct loop implementation, forward only. The reference conv2d is checked against.
Tensor conv2d_reference(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        Conv2dOptions opt = {});
/// weight: [Cin, Cout, kH, kW]. Output extent (H-1)*stride - 2*padding + kH.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 2,
                        int padding = 0);

/// Half-pixel (align_corners=false) bilinear resize.
Tensor interpolate_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
/// Mirror padding without repeating the border pixel.
Tensor reflect_pad2d(const Tensor& x, int pad);

/// Per-channel normalization over (N,H,W). In training mode the batch statistics are used
/// and the running buffers updated in place; otherwise the running buffers are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                  Tensor running_var, bool training, double momentum = 0.1, double eps = 1e-5);
/// Normalizes across channels independently at every (n, h, w).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// GlobalAvg/GlobalMax give [N,C,1,1]; Avg2x2 halves H and W (ceil), averaging the valid
/// pixels of partial windows.
Tensor pool(const Tensor& x, PoolKind kind);
/// [N,C,H,W] -> [N,1,H,W]
Tensor channel_reduce(const Tensor& x, ChannelReduce kind);

/// x: [N,Cin], weight: [Cout,Cin], bias optional [Cout].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace edunet
