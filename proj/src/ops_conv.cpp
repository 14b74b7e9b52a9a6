#include <Eigen/Core>
#include <algorithm>

#include "edunet/ops.hpp"

namespace edunet {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Bounds the im2col scratch buffer; output rows are processed in chunks below this size.
constexpr std::int64_t kMaxColElements = std::int64_t{1} << 22;

struct Geometry {
  std::int64_t channels, in_h, in_w, kh, kw, out_h, out_w;
  int stride, pad;
};

// col[(c*kh + i)*kw + j][p] for output rows [oh0, oh1).
template <class T>
void im2col(const T* src, const Geometry& g, std::int64_t oh0, std::int64_t oh1, T* col) {
  const std::int64_t cols = (oh1 - oh0) * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.in_h * g.in_w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + i;
          T* dst = row + (oh - oh0) * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src_row = plane + ih * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + j;
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src_row[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into dst (accumulating).
template <class T>
void col2im(const T* col, const Geometry& g, std::int64_t oh0, std::int64_t oh1, T* dst) {
  const std::int64_t cols = (oh1 - oh0) * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* plane = dst + c * g.in_h * g.in_w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.in_h) continue;
          const T* src = row + (oh - oh0) * g.out_w;
          T* dst_row = plane + ih * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + j;
            if (iw >= 0 && iw < g.in_w) dst_row[iw] += src[ow];
          }
        }
      }
    }
  }
}

std::int64_t rows_per_chunk(const Geometry& g) {
  const std::int64_t per_row = std::max<std::int64_t>(1, g.channels * g.kh * g.kw * g.out_w);
  return std::clamp<std::int64_t>(kMaxColElements / per_row, 1, g.out_h);
}

bool is_pointwise(const Geometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

struct ConvShape {
  std::int64_t n, cin, h, w, cout, kh, kw, oh, ow;
  int groups;
};

ConvShape check_conv(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dOptions& o) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d expects NCHW input and 4-D weight, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  if (x.dtype() != w.dtype() || (bias.defined() && bias.dtype() != x.dtype()))
    throw ShapeError("conv2d: dtype mismatch");
  if (o.stride < 1 || o.padding < 0 || o.groups < 1)
    throw ShapeError("conv2d: invalid stride/padding/groups");
  ConvShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, o.groups};
  if (s.cin % o.groups != 0 || s.cout % o.groups != 0)
    throw ShapeError("conv2d: channels not divisible by groups");
  if (w.dim(1) != s.cin / o.groups)
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                     shape_str(x.shape()) + " with groups=" + std::to_string(o.groups));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != s.cout))
    throw ShapeError("conv2d: bias must have shape (" + std::to_string(s.cout) + ")");
  const std::int64_t eh = s.h + 2 * o.padding - s.kh;
  const std::int64_t ew = s.w + 2 * o.padding - s.kw;
  if (eh < 0 || ew < 0 || eh % o.stride != 0 || ew % o.stride != 0)
    throw ShapeError("conv2d: non-integer output extent for input " + shape_str(x.shape()) +
                     " kernel " + std::to_string(s.kh) + "x" + std::to_string(s.kw) +
                     " stride " + std::to_string(o.stride) + " padding " +
                     std::to_string(o.padding));
  s.oh = eh / o.stride + 1;
  s.ow = ew / o.stride + 1;
  return s;
}

// Depthwise: groups == cin == cout.
template <class T>
void depthwise_forward(const T* x, const T* w, const T* b, const ConvShape& s, int stride, int pad,
                       T* out) {
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.cin; ++c) {
      const T* plane = x + (n * s.cin + c) * s.h * s.w;
      const T* k = w + c * s.kh * s.kw;
      T* o = out + (n * s.cout + c) * s.oh * s.ow;
      const T bias = b ? b[c] : T(0);
      for (std::int64_t oh = 0; oh < s.oh; ++oh) {
        for (std::int64_t ow = 0; ow < s.ow; ++ow) {
          T acc = 0;
          for (std::int64_t i = 0; i < s.kh; ++i) {
            const std::int64_t ih = oh * stride - pad + i;
            if (ih < 0 || ih >= s.h) continue;
            for (std::int64_t j = 0; j < s.kw; ++j) {
              const std::int64_t iw = ow * stride - pad + j;
              if (iw < 0 || iw >= s.w) continue;
              acc += k[i * s.kw + j] * plane[ih * s.w + iw];
            }
          }
          o[oh * s.ow + ow] = acc + bias;
        }
      }
    }
  }
}

template <class T>
void depthwise_backward(const T* x, const T* w, const T* g, const ConvShape& s, int stride, int pad,
                        T* gx, T* gw) {
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.cin; ++c) {
      const T* plane = x + (n * s.cin + c) * s.h * s.w;
      const T* k = w + c * s.kh * s.kw;
      const T* go = g + (n * s.cout + c) * s.oh * s.ow;
      T* gplane = gx ? gx + (n * s.cin + c) * s.h * s.w : nullptr;
      T* gk = gw ? gw + c * s.kh * s.kw : nullptr;
      for (std::int64_t oh = 0; oh < s.oh; ++oh) {
        for (std::int64_t ow = 0; ow < s.ow; ++ow) {
          const T gv = go[oh * s.ow + ow];
          for (std::int64_t i = 0; i < s.kh; ++i) {
            const std::int64_t ih = oh * stride - pad + i;
            if (ih < 0 || ih >= s.h) continue;
            for (std::int64_t j = 0; j < s.kw; ++j) {
              const std::int64_t iw = ow * stride - pad + j;
              if (iw < 0 || iw >= s.w) continue;
              if (gplane) gplane[ih * s.w + iw] += gv * k[i * s.kw + j];
              if (gk) gk[i * s.kw + j] += gv * plane[ih * s.w + iw];
            }
          }
        }
      }
    }
  }
}

template <class T>
void gemm_forward(const T* x, const T* w, const T* b, const ConvShape& s, int stride, int pad,
                  T* out) {
  const std::int64_t cin_g = s.cin / s.groups, cout_g = s.cout / s.groups;
  const Geometry geo{cin_g, s.h, s.w, s.kh, s.kw, s.oh, s.ow, stride, pad};
  const std::int64_t K = cin_g * s.kh * s.kw;
  const std::int64_t hw_out = s.oh * s.ow, hw_in = s.h * s.w;
  const std::int64_t chunk = rows_per_chunk(geo);
  const bool pointwise = is_pointwise(geo);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K * chunk * s.ow));
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (int gi = 0; gi < s.groups; ++gi) {
      const T* xg = x + (n * s.cin + gi * cin_g) * hw_in;
      ConstMap<T> wg(w + gi * cout_g * K, cout_g, K);
      for (std::int64_t oh0 = 0; oh0 < s.oh; oh0 += chunk) {
        const std::int64_t oh1 = std::min(s.oh, oh0 + chunk);
        const std::int64_t P = (oh1 - oh0) * s.ow;
        StridedMap<T> ob(out + (n * s.cout + gi * cout_g) * hw_out + oh0 * s.ow, cout_g, P,
                         Eigen::OuterStride<>(hw_out));
        if (pointwise) {
          ConstStridedMap<T> cm(xg + oh0 * s.ow, K, P, Eigen::OuterStride<>(hw_in));
          ob.noalias() = wg * cm;
        } else {
          im2col(xg, geo, oh0, oh1, col.data());
          ConstMap<T> cm(col.data(), K, P);
          ob.noalias() = wg * cm;
        }
      }
    }
  }
  if (b) {
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.cout; ++c) {
        T* o = out + (n * s.cout + c) * hw_out;
        for (std::int64_t p = 0; p < hw_out; ++p) o[p] += b[c];
      }
  }
}

template <class T>
void gemm_backward(const T* x, const T* w, const T* g, const ConvShape& s, int stride, int pad,
                   T* gx, T* gw) {
  const std::int64_t cin_g = s.cin / s.groups, cout_g = s.cout / s.groups;
  const Geometry geo{cin_g, s.h, s.w, s.kh, s.kw, s.oh, s.ow, stride, pad};
  const std::int64_t K = cin_g * s.kh * s.kw;
  const std::int64_t hw_out = s.oh * s.ow, hw_in = s.h * s.w;
  const std::int64_t chunk = rows_per_chunk(geo);
  const bool pointwise = is_pointwise(geo);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K * chunk * s.ow));
  std::vector<T> dcol(pointwise ? 0 : static_cast<std::size_t>(K * chunk * s.ow));
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (int gi = 0; gi < s.groups; ++gi) {
      const T* xg = x + (n * s.cin + gi * cin_g) * hw_in;
      ConstMap<T> wg(w + gi * cout_g * K, cout_g, K);
      for (std::int64_t oh0 = 0; oh0 < s.oh; oh0 += chunk) {
        const std::int64_t oh1 = std::min(s.oh, oh0 + chunk);
        const std::int64_t P = (oh1 - oh0) * s.ow;
        ConstStridedMap<T> gb(g + (n * s.cout + gi * cout_g) * hw_out + oh0 * s.ow, cout_g, P,
                              Eigen::OuterStride<>(hw_out));
        if (pointwise) {
          ConstStridedMap<T> cm(xg + oh0 * s.ow, K, P, Eigen::OuterStride<>(hw_in));
          if (gw) {
            Eigen::Map<RowMat<T>> gwg(gw + gi * cout_g * K, cout_g, K);
            gwg.noalias() += gb * cm.transpose();
          }
          if (gx) {
            StridedMap<T> gxm(gx + (n * s.cin + gi * cin_g) * hw_in + oh0 * s.ow, K, P,
                              Eigen::OuterStride<>(hw_in));
            gxm.noalias() += wg.transpose() * gb;
          }
          continue;
        }
        if (gw) {
          im2col(xg, geo, oh0, oh1, col.data());
          ConstMap<T> cm(col.data(), K, P);
          Eigen::Map<RowMat<T>> gwg(gw + gi * cout_g * K, cout_g, K);
          gwg.noalias() += gb * cm.transpose();
        }
        if (gx) {
          Eigen::Map<RowMat<T>> dm(dcol.data(), K, P);
          dm.noalias() = wg.transpose() * gb;
          col2im(dcol.data(), geo, oh0, oh1, gx + (n * s.cin + gi * cin_g) * hw_in);
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  const ConvShape s = check_conv(x, weight, bias, opt);
  const bool depthwise = opt.groups == s.cin && s.cout == s.cin && opt.groups > 1;
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(s.n * s.cout * s.oh * s.ow));
  dispatch(dt, [&]<class T>() {
    const T* b = bias.defined() ? bias.data<T>().data() : nullptr;
    if (depthwise)
      depthwise_forward(x.data<T>().data(), weight.data<T>().data(), b, s, opt.stride,
                        opt.padding, data.span<T>().data());
    else
      gemm_forward(x.data<T>().data(), weight.data<T>().data(), b, s, opt.stride, opt.padding,
                   data.span<T>().data());
  });
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({s.n, s.cout, s.oh, s.ow}, std::move(data), inputs, "conv2d",
                     [xi, wi, bi, s, opt, depthwise, dt](const Buffer& g, const Buffer&) {
    dispatch(dt, [&]<class T>() {
      const T* pg = g.span<T>().data();
      Buffer gx, gw;
      if (xi->requires_grad) gx = Buffer(dt, xi->data.size());
      if (wi->requires_grad) gw = Buffer(dt, wi->data.size());
      T* pgx = xi->requires_grad ? gx.span<T>().data() : nullptr;
      T* pgw = wi->requires_grad ? gw.span<T>().data() : nullptr;
      const T* px = std::as_const(xi->data).span<T>().data();
      const T* pw = std::as_const(wi->data).span<T>().data();
      if (pgx || pgw) {
        if (depthwise)
          depthwise_backward(px, pw, pg, s, opt.stride, opt.padding, pgx, pgw);
        else
          gemm_backward(px, pw, pg, s, opt.stride, opt.padding, pgx, pgw);
      }
      if (pgx) accumulate_grad(*xi, gx);
      if (pgw) accumulate_grad(*wi, gw);
      if (bi && bi->requires_grad) {
        Buffer gb(dt, bi->data.size());
        auto pgb = gb.span<T>();
        const std::int64_t hw = s.oh * s.ow;
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t c = 0; c < s.cout; ++c) {
            const T* row = pg + (n * s.cout + c) * hw;
            T acc = 0;
            for (std::int64_t p = 0; p < hw; ++p) acc += row[p];
            pgb[c] += acc;
          }
        accumulate_grad(*bi, gb);
      }
    });
  });
}

Tensor conv2d_reference(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        Conv2dOptions opt) {
  const ConvShape s = check_conv(x, weight, bias, opt);
  const std::int64_t cin_g = s.cin / s.groups, cout_g = s.cout / s.groups;
  Tensor out = Tensor::zeros({s.n, s.cout, s.oh, s.ow}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto px = x.data<T>();
    auto pw = weight.data<T>();
    auto po = out.mutable_data<T>();
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t co = 0; co < s.cout; ++co) {
        const std::int64_t gi = co / cout_g;
        for (std::int64_t oh = 0; oh < s.oh; ++oh)
          for (std::int64_t ow = 0; ow < s.ow; ++ow) {
            T acc = bias.defined() ? bias.data<T>()[co] : T(0);
            for (std::int64_t ci = 0; ci < cin_g; ++ci)
              for (std::int64_t i = 0; i < s.kh; ++i)
                for (std::int64_t j = 0; j < s.kw; ++j) {
                  const std::int64_t ih = oh * opt.stride - opt.padding + i;
                  const std::int64_t iw = ow * opt.stride - opt.padding + j;
                  if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
                  acc += pw[((co * cin_g + ci) * s.kh + i) * s.kw + j] *
                         px[((n * s.cin + gi * cin_g + ci) * s.h + ih) * s.w + iw];
                }
            po[((n * s.cout + co) * s.oh + oh) * s.ow + ow] = acc;
          }
      }
  });
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int padding) {
  if (x.rank() != 4 || weight.rank() != 4)
    throw ShapeError("conv_transpose2d expects NCHW input and [Cin,Cout,kH,kW] weight");
  if (x.dtype() != weight.dtype() || (bias.defined() && bias.dtype() != x.dtype()))
    throw ShapeError("conv_transpose2d: dtype mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv_transpose2d: invalid stride/padding");
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (weight.dim(0) != cin)
    throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape()) +
                     " does not match input channels " + std::to_string(cin));
  const std::int64_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw ShapeError("conv_transpose2d: bias shape mismatch");
  const std::int64_t oh = (h - 1) * stride - 2 * padding + kh;
  const std::int64_t ow = (w - 1) * stride - 2 * padding + kw;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
  // The forward is col2im of W^T x under the geometry of a conv mapping (oh,ow) -> (h,w).
  const Geometry geo{cout, oh, ow, kh, kw, h, w, stride, padding};
  const std::int64_t K = cout * kh * kw;
  const std::int64_t hw_in = h * w, hw_out = oh * ow;
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(n * cout * hw_out));
  dispatch(dt, [&]<class T>() {
    ConstMap<T> wm(weight.data<T>().data(), cin, K);
    std::vector<T> col(static_cast<std::size_t>(K * hw_in));
    T* po = data.span<T>().data();
    for (std::int64_t b = 0; b < n; ++b) {
      ConstMap<T> xm(x.data<T>().data() + b * cin * hw_in, cin, hw_in);
      Eigen::Map<RowMat<T>> cm(col.data(), K, hw_in);
      cm.noalias() = wm.transpose() * xm;
      col2im(col.data(), geo, 0, h, po + b * cout * hw_out);
    }
    if (bias.defined()) {
      auto pb = bias.data<T>();
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t c = 0; c < cout; ++c) {
          T* plane = po + (b * cout + c) * hw_out;
          for (std::int64_t p = 0; p < hw_out; ++p) plane[p] += pb[c];
        }
    }
  });
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({n, cout, oh, ow}, std::move(data), inputs, "conv_transpose2d",
                     [xi, wi, bi, geo, n, cin, cout, K, hw_in, hw_out, h, dt](const Buffer& g,
                                                                              const Buffer&) {
    dispatch(dt, [&]<class T>() {
      const T* pg = g.span<T>().data();
      ConstMap<T> wm(std::as_const(wi->data).span<T>().data(), cin, K);
      std::vector<T> col(static_cast<std::size_t>(K * hw_in));
      Buffer gx, gw;
      if (xi->requires_grad) gx = Buffer(dt, xi->data.size());
      if (wi->requires_grad) gw = Buffer(dt, wi->data.size());
      for (std::int64_t b = 0; b < n; ++b) {
        im2col(pg + b * cout * hw_out, geo, 0, h, col.data());
        ConstMap<T> cm(col.data(), K, hw_in);
        if (xi->requires_grad) {
          Eigen::Map<RowMat<T>> gxm(gx.span<T>().data() + b * cin * hw_in, cin, hw_in);
          gxm.noalias() += wm * cm;
        }
        if (wi->requires_grad) {
          ConstMap<T> xm(std::as_const(xi->data).span<T>().data() + b * cin * hw_in, cin, hw_in);
          Eigen::Map<RowMat<T>> gwm(gw.span<T>().data(), cin, K);
          gwm.noalias() += xm * cm.transpose();
        }
      }
      if (xi->requires_grad) accumulate_grad(*xi, gx);
      if (wi->requires_grad) accumulate_grad(*wi, gw);
      if (bi && bi->requires_grad) {
        Buffer gb(dt, bi->data.size());
        auto pgb = gb.span<T>();
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t c = 0; c < cout; ++c) {
            const T* plane = pg + (b * cout + c) * hw_out;
            T acc = 0;
            for (std::int64_t p = 0; p < hw_out; ++p) acc += plane[p];
            pgb[c] += acc;
          }
        accumulate_grad(*bi, gb);
      }
    });
  });
}

}  // namespace edunet
