#include <algorithm>
#include <cmath>

#include "edunet/ops.hpp"

namespace edunet {
namespace {

void require_nchw(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + " expects NCHW, got " + shape_str(x.shape()));
}

void require_channel_vector(const Tensor& v, std::int64_t c, const char* op, const char* what) {
  if (v.rank() != 1 || v.dim(0) != c)
    throw ShapeError(std::string(op) + ": " + what + " must have shape (" + std::to_string(c) +
                     "), got " + shape_str(v.shape()));
}

struct LerpTap {
  std::int64_t i0, i1;
  double frac;
};

// Half-pixel source coordinates, clamped at the low border.
std::vector<LerpTap> lerp_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

Tensor interpolate_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_nchw(x, "interpolate_bilinear");
  if (out_h < 1 || out_w < 1) throw ShapeError("interpolate_bilinear: zero-size target");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 1 || w < 1) throw ShapeError("interpolate_bilinear: empty input");
  const auto ty = lerp_taps(h, out_h);
  const auto tx = lerp_taps(w, out_w);
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(n * c * out_h * out_w));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* src = px.data() + p * h * w;
      T* dst = po.data() + p * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[static_cast<std::size_t>(oy)];
        const T fy = static_cast<T>(a.frac);
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[static_cast<std::size_t>(ox)];
          const T fx = static_cast<T>(b.frac);
          const T top = (T(1) - fx) * src[a.i0 * w + b.i0] + fx * src[a.i0 * w + b.i1];
          const T bot = (T(1) - fx) * src[a.i1 * w + b.i0] + fx * src[a.i1 * w + b.i1];
          dst[oy * out_w + ox] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  });
  auto xi = x.impl();
  return make_result({n, c, out_h, out_w}, std::move(data), {x}, "interpolate_bilinear",
                     [xi, ty, tx, n, c, h, w, out_h, out_w, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, xi->data.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pgx = gx.span<T>();
      for (std::int64_t p = 0; p < n * c; ++p) {
        const T* src = pg.data() + p * out_h * out_w;
        T* dst = pgx.data() + p * h * w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[static_cast<std::size_t>(oy)];
          const T fy = static_cast<T>(a.frac);
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const auto& b = tx[static_cast<std::size_t>(ox)];
            const T fx = static_cast<T>(b.frac);
            const T v = src[oy * out_w + ox];
            dst[a.i0 * w + b.i0] += (T(1) - fy) * (T(1) - fx) * v;
            dst[a.i0 * w + b.i1] += (T(1) - fy) * fx * v;
            dst[a.i1 * w + b.i0] += fy * (T(1) - fx) * v;
            dst[a.i1 * w + b.i1] += fy * fx * v;
          }
        }
      }
    });
    accumulate_grad(*xi, gx);
  });
}

Tensor reflect_pad2d(const Tensor& x, int pad) {
  require_nchw(x, "reflect_pad2d");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (pad < 0 || pad >= h || pad >= w)
    throw ShapeError("reflect_pad2d: pad " + std::to_string(pad) + " too large for " +
                     shape_str(x.shape()));
  const std::int64_t oh = h + 2 * pad, ow = w + 2 * pad;
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(n * c * oh * ow));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::int64_t p = 0; p < n * c; ++p)
      for (std::int64_t y = 0; y < oh; ++y) {
        const std::int64_t sy = reflect_index(y - pad, h);
        for (std::int64_t xx = 0; xx < ow; ++xx)
          po[(p * oh + y) * ow + xx] = px[(p * h + sy) * w + reflect_index(xx - pad, w)];
      }
  });
  auto xi = x.impl();
  return make_result({n, c, oh, ow}, std::move(data), {x}, "reflect_pad2d",
                     [xi, n, c, h, w, oh, ow, pad, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, xi->data.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pgx = gx.span<T>();
      for (std::int64_t p = 0; p < n * c; ++p)
        for (std::int64_t y = 0; y < oh; ++y) {
          const std::int64_t sy = reflect_index(y - pad, h);
          for (std::int64_t xx = 0; xx < ow; ++xx)
            pgx[(p * h + sy) * w + reflect_index(xx - pad, w)] += pg[(p * oh + y) * ow + xx];
        }
    });
    accumulate_grad(*xi, gx);
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                  Tensor running_var, bool training, double momentum, double eps) {
  require_nchw(x, "batch_norm");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_channel_vector(gamma, c, "batch_norm", "gamma");
  require_channel_vector(beta, c, "batch_norm", "beta");
  require_channel_vector(running_mean, c, "batch_norm", "running_mean");
  require_channel_vector(running_var, c, "batch_norm", "running_var");
  const std::int64_t m = n * hw;
  if (m == 0) throw ShapeError("batch_norm: empty batch");
  const DType dt = x.dtype();
  std::vector<double> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  Buffer data(dt, static_cast<std::size_t>(x.numel()));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto pg = gamma.data<T>();
    auto pb = beta.data<T>();
    auto po = data.span<T>();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double mu, var;
      if (training) {
        double s = 0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = px.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) s += p[i];
        }
        mu = s / static_cast<double>(m);
        double sq = 0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = px.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
        }
        var = sq / static_cast<double>(m);
        auto rm = running_mean.mutable_data<T>();
        auto rv = running_var.mutable_data<T>();
        const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
        rm[ch] = static_cast<T>((1 - momentum) * rm[ch] + momentum * mu);
        rv[ch] = static_cast<T>((1 - momentum) * rv[ch] + momentum * unbiased);
      } else {
        mu = running_mean.data<T>()[ch];
        var = running_var.data<T>()[ch];
      }
      const double is = 1.0 / std::sqrt(var + eps);
      mean[ch] = mu;
      invstd[ch] = is;
      const T scale = static_cast<T>(pg[ch] * is);
      const T shift = static_cast<T>(pb[ch] - pg[ch] * mu * is);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = px.data() + (b * c + ch) * hw;
        T* o = po.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) o[i] = scale * p[i] + shift;
      }
    }
  });
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(x.shape(), std::move(data), {x, gamma, beta}, "batch_norm",
                     [xi, gi, bi, mean, invstd, training, n, c, hw, m, dt](const Buffer& g,
                                                                          const Buffer&) {
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto px = std::as_const(xi->data).span<T>();
      auto pgam = std::as_const(gi->data).span<T>();
      Buffer gx(dt, xi->data.size()), ggam(dt, gi->data.size()), gbet(dt, bi->data.size());
      auto pgx = gx.span<T>();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double mu = mean[ch], is = invstd[ch];
        double sum_g = 0, sum_gx = 0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* pgo = pg.data() + (b * c + ch) * hw;
          const T* p = px.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            sum_g += pgo[i];
            sum_gx += pgo[i] * (p[i] - mu) * is;
          }
        }
        ggam.set(static_cast<std::size_t>(ch), sum_gx);
        gbet.set(static_cast<std::size_t>(ch), sum_g);
        const double gam = pgam[ch];
        for (std::int64_t b = 0; b < n; ++b) {
          const T* pgo = pg.data() + (b * c + ch) * hw;
          const T* p = px.data() + (b * c + ch) * hw;
          T* o = pgx.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            if (training) {
              const double xhat = (p[i] - mu) * is;
              o[i] = static_cast<T>(gam * is / static_cast<double>(m) *
                                    (static_cast<double>(m) * pgo[i] - sum_g - xhat * sum_gx));
            } else {
              o[i] = static_cast<T>(gam * is * pgo[i]);
            }
          }
        }
      }
      accumulate_grad(*xi, gx);
      accumulate_grad(*gi, ggam);
      accumulate_grad(*bi, gbet);
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_nchw(x, "layer_norm");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_channel_vector(gamma, c, "layer_norm", "gamma");
  require_channel_vector(beta, c, "layer_norm", "beta");
  const DType dt = x.dtype();
  std::vector<double> mean(static_cast<std::size_t>(n * hw)), invstd(mean.size());
  Buffer data(dt, static_cast<std::size_t>(x.numel()));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto pg = gamma.data<T>();
    auto pb = beta.data<T>();
    auto po = data.span<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < hw; ++i) {
        const T* p = px.data() + b * c * hw + i;
        double s = 0;
        for (std::int64_t ch = 0; ch < c; ++ch) s += p[ch * hw];
        const double mu = s / static_cast<double>(c);
        double sq = 0;
        for (std::int64_t ch = 0; ch < c; ++ch) sq += (p[ch * hw] - mu) * (p[ch * hw] - mu);
        const double is = 1.0 / std::sqrt(sq / static_cast<double>(c) + eps);
        mean[b * hw + i] = mu;
        invstd[b * hw + i] = is;
        T* o = po.data() + b * c * hw + i;
        for (std::int64_t ch = 0; ch < c; ++ch)
          o[ch * hw] = static_cast<T>(pg[ch] * (p[ch * hw] - mu) * is + pb[ch]);
      }
  });
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(x.shape(), std::move(data), {x, gamma, beta}, "layer_norm",
                     [xi, gi, bi, mean, invstd, n, c, hw, dt](const Buffer& g, const Buffer&) {
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto px = std::as_const(xi->data).span<T>();
      auto pgam = std::as_const(gi->data).span<T>();
      Buffer gx(dt, xi->data.size());
      std::vector<double> ggam(static_cast<std::size_t>(c)), gbet(static_cast<std::size_t>(c));
      auto pgx = gx.span<T>();
      std::vector<double> dxhat(static_cast<std::size_t>(c)), xhat(static_cast<std::size_t>(c));
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
          const double mu = mean[b * hw + i], is = invstd[b * hw + i];
          const std::int64_t base = b * c * hw + i;
          double s1 = 0, s2 = 0;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const double go = pg[base + ch * hw];
            xhat[ch] = (px[base + ch * hw] - mu) * is;
            dxhat[ch] = go * pgam[ch];
            ggam[ch] += go * xhat[ch];
            gbet[ch] += go;
            s1 += dxhat[ch];
            s2 += dxhat[ch] * xhat[ch];
          }
          const double cd = static_cast<double>(c);
          for (std::int64_t ch = 0; ch < c; ++ch)
            pgx[base + ch * hw] = static_cast<T>(is / cd * (cd * dxhat[ch] - s1 - xhat[ch] * s2));
        }
      Buffer bg(dt, static_cast<std::size_t>(c)), bb(dt, static_cast<std::size_t>(c));
      for (std::int64_t ch = 0; ch < c; ++ch) {
        bg.set(static_cast<std::size_t>(ch), ggam[ch]);
        bb.set(static_cast<std::size_t>(ch), gbet[ch]);
      }
      accumulate_grad(*xi, gx);
      accumulate_grad(*gi, bg);
      accumulate_grad(*bi, bb);
    });
  });
}

Tensor pool(const Tensor& x, PoolKind kind) {
  require_nchw(x, "pool");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == 0 || w == 0) throw ShapeError("pool: empty spatial extent");
  const DType dt = x.dtype();
  auto xi = x.impl();
  if (kind == PoolKind::Avg2x2) {
    const std::int64_t oh = (h + 1) / 2, ow = (w + 1) / 2;
    Buffer data(dt, static_cast<std::size_t>(n * c * oh * ow));
    dispatch(dt, [&]<class T>() {
      auto px = x.data<T>();
      auto po = data.span<T>();
      for (std::int64_t p = 0; p < n * c; ++p)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            T acc = 0;
            int cnt = 0;
            for (std::int64_t dy = 0; dy < 2; ++dy)
              for (std::int64_t dx = 0; dx < 2; ++dx) {
                const std::int64_t sy = 2 * y + dy, sx = 2 * xx + dx;
                if (sy < h && sx < w) {
                  acc += px[(p * h + sy) * w + sx];
                  ++cnt;
                }
              }
            po[(p * oh + y) * ow + xx] = acc / static_cast<T>(cnt);
          }
    });
    return make_result({n, c, oh, ow}, std::move(data), {x}, "avg2x2",
                       [xi, n, c, h, w, oh, ow, dt](const Buffer& g, const Buffer&) {
      Buffer gx(dt, xi->data.size());
      dispatch(dt, [&]<class T>() {
        auto pg = g.span<T>();
        auto pgx = gx.span<T>();
        for (std::int64_t p = 0; p < n * c; ++p)
          for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx) {
              const int cnt = static_cast<int>((std::min<std::int64_t>(2 * y + 2, h) - 2 * y) *
                                               (std::min<std::int64_t>(2 * xx + 2, w) - 2 * xx));
              const T v = pg[(p * oh + y) * ow + xx] / static_cast<T>(cnt);
              for (std::int64_t dy = 0; dy < 2; ++dy)
                for (std::int64_t dx = 0; dx < 2; ++dx) {
                  const std::int64_t sy = 2 * y + dy, sx = 2 * xx + dx;
                  if (sy < h && sx < w) pgx[(p * h + sy) * w + sx] += v;
                }
            }
      });
      accumulate_grad(*xi, gx);
    });
  }

  const std::int64_t hw = h * w;
  Buffer data(dt, static_cast<std::size_t>(n * c));
  std::vector<std::int64_t> argmax;
  if (kind == PoolKind::GlobalMax) argmax.resize(static_cast<std::size_t>(n * c));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* src = px.data() + p * hw;
      if (kind == PoolKind::GlobalAvg) {
        T acc = 0;
        for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
        po[p] = acc / static_cast<T>(hw);
      } else {
        std::int64_t best = 0;
        for (std::int64_t i = 1; i < hw; ++i)
          if (src[i] > src[best]) best = i;
        argmax[p] = best;
        po[p] = src[best];
      }
    }
  });
  return make_result({n, c, 1, 1}, std::move(data), {x},
                     kind == PoolKind::GlobalAvg ? "global_avg" : "global_max",
                     [xi, kind, argmax, n, c, hw, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, xi->data.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pgx = gx.span<T>();
      for (std::int64_t p = 0; p < n * c; ++p) {
        if (kind == PoolKind::GlobalAvg) {
          const T v = pg[p] / static_cast<T>(hw);
          for (std::int64_t i = 0; i < hw; ++i) pgx[p * hw + i] = v;
        } else {
          pgx[p * hw + argmax[p]] = pg[p];
        }
      }
    });
    accumulate_grad(*xi, gx);
  });
}

Tensor channel_reduce(const Tensor& x, ChannelReduce kind) {
  require_nchw(x, "channel_reduce");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c == 0) throw ShapeError("channel_reduce: no channels");
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(n * hw));
  std::vector<std::int64_t> argmax;
  if (kind == ChannelReduce::Max) argmax.resize(static_cast<std::size_t>(n * hw));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < hw; ++i) {
        const T* p = px.data() + b * c * hw + i;
        if (kind == ChannelReduce::Mean) {
          T acc = 0;
          for (std::int64_t ch = 0; ch < c; ++ch) acc += p[ch * hw];
          po[b * hw + i] = acc / static_cast<T>(c);
        } else {
          std::int64_t best = 0;
          for (std::int64_t ch = 1; ch < c; ++ch)
            if (p[ch * hw] > p[best * hw]) best = ch;
          argmax[b * hw + i] = best;
          po[b * hw + i] = p[best * hw];
        }
      }
  });
  auto xi = x.impl();
  return make_result({n, 1, x.dim(2), x.dim(3)}, std::move(data), {x},
                     kind == ChannelReduce::Mean ? "channel_mean" : "channel_max",
                     [xi, kind, argmax, n, c, hw, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, xi->data.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pgx = gx.span<T>();
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
          const T v = pg[b * hw + i];
          if (kind == ChannelReduce::Mean) {
            for (std::int64_t ch = 0; ch < c; ++ch) pgx[b * c * hw + ch * hw + i] = v / static_cast<T>(c);
          } else {
            pgx[b * c * hw + argmax[b * hw + i] * hw + i] = v;
          }
        }
    });
    accumulate_grad(*xi, gx);
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  if (x.dtype() != weight.dtype() || (bias.defined() && bias.dtype() != x.dtype()))
    throw ShapeError("linear: dtype mismatch");
  const std::int64_t n = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  if (bias.defined()) require_channel_vector(bias, cout, "linear", "bias");
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(n * cout));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto pw = weight.data<T>();
    auto po = data.span<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t o = 0; o < cout; ++o) {
        T acc = bias.defined() ? bias.data<T>()[o] : T(0);
        for (std::int64_t i = 0; i < cin; ++i) acc += pw[o * cin + i] * px[b * cin + i];
        po[b * cout + o] = acc;
      }
  });
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({n, cout}, std::move(data), inputs, "linear",
                     [xi, wi, bi, n, cin, cout, dt](const Buffer& g, const Buffer&) {
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto px = std::as_const(xi->data).span<T>();
      auto pw = std::as_const(wi->data).span<T>();
      if (xi->requires_grad) {
        Buffer gx(dt, xi->data.size());
        auto p = gx.span<T>();
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t o = 0; o < cout; ++o)
            for (std::int64_t i = 0; i < cin; ++i) p[b * cin + i] += pg[b * cout + o] * pw[o * cin + i];
        accumulate_grad(*xi, gx);
      }
      if (wi->requires_grad) {
        Buffer gw(dt, wi->data.size());
        auto p = gw.span<T>();
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t o = 0; o < cout; ++o)
            for (std::int64_t i = 0; i < cin; ++i) p[o * cin + i] += pg[b * cout + o] * px[b * cin + i];
        accumulate_grad(*wi, gw);
      }
      if (bi && bi->requires_grad) {
        Buffer gb(dt, bi->data.size());
        auto p = gb.span<T>();
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t o = 0; o < cout; ++o) p[o] += pg[b * cout + o];
        accumulate_grad(*bi, gb);
      }
    });
  });
}

}  // namespace edunet
