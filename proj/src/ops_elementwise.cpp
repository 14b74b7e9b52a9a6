#include <algorithm>
#include <cmath>
#include <numeric>

#include "edunet/ops.hpp"

namespace edunet {
namespace {

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int d = static_cast<int>(s.size()) - 2; d >= 0; --d) st[d] = st[d + 1] * s[d + 1];
  return st;
}

// Strides of `in` seen through `out` after left-padding; broadcast axes get stride 0.
std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  auto st = contiguous_strides(in);
  std::vector<std::int64_t> res(r, 0);
  for (std::size_t d = off; d < r; ++d) {
    const auto e = in[d - off];
    res[d] = (e == 1 && out[d] != 1) ? 0 : st[d - off];
  }
  return res;
}

// Calls f(out_flat, a_offset, b_offset) for every element of `out`.
template <class F>
void for_each_index(const Shape& out, const std::vector<std::int64_t>& sa,
                    const std::vector<std::int64_t>& sb, F&& f) {
  const std::int64_t total = shape_numel(out);
  if (total == 0) return;
  const int r = static_cast<int>(out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ao = 0, bo = 0;
  const std::int64_t inner = out[r - 1];
  const std::int64_t sai = sa[r - 1], sbi = sb[r - 1];
  for (std::int64_t flat = 0; flat < total; flat += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(flat + j, ao + j * sai, bo + j * sbi);
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      ao += sa[d];
      bo += sb[d];
      if (idx[d] < out[d]) break;
      ao -= sa[d] * out[d];
      bo -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()) + ")");
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require_same_dtype(a, b, name);
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  const auto sa = aligned_strides(a.shape(), out);
  const auto sb = aligned_strides(b.shape(), out);
  const DType dt = a.dtype();
  Buffer data(dt, static_cast<std::size_t>(shape_numel(out)));
  dispatch(dt, [&]<class T>() {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    auto po = data.span<T>();
    for_each_index(out, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      const T x = pa[ia], y = pb[ib];
      switch (op) {
        case BinOp::Add: po[i] = x + y; break;
        case BinOp::Sub: po[i] = x - y; break;
        case BinOp::Mul: po[i] = x * y; break;
        case BinOp::Div: po[i] = x / y; break;
      }
    });
  });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(out, std::move(data), {a, b}, name,
                     [ai, bi, out, sa, sb, op, dt](const Buffer& g, const Buffer&) {
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pa = std::as_const(ai->data).span<T>();
      auto pb = std::as_const(bi->data).span<T>();
      if (ai->requires_grad) {
        Buffer ga(dt, ai->data.size());
        auto pga = ga.span<T>();
        for_each_index(out, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
          switch (op) {
            case BinOp::Add:
            case BinOp::Sub: pga[ia] += pg[i]; break;
            case BinOp::Mul: pga[ia] += pg[i] * pb[ib]; break;
            case BinOp::Div: pga[ia] += pg[i] / pb[ib]; break;
          }
        });
        accumulate_grad(*ai, ga);
      }
      if (bi->requires_grad) {
        Buffer gb(dt, bi->data.size());
        auto pgb = gb.span<T>();
        for_each_index(out, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
          switch (op) {
            case BinOp::Add: pgb[ib] += pg[i]; break;
            case BinOp::Sub: pgb[ib] -= pg[i]; break;
            case BinOp::Mul: pgb[ib] += pg[i] * pa[ia]; break;
            case BinOp::Div: pgb[ib] -= pg[i] * pa[ia] / (pb[ib] * pb[ib]); break;
          }
        });
        accumulate_grad(*bi, gb);
      }
    });
  });
}

// out = scale * x + shift
Tensor affine_scalar(const Tensor& x, double scale, double shift, const char* name) {
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(x.numel()));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    const T s = static_cast<T>(scale), c = static_cast<T>(shift);
    for (std::size_t i = 0; i < po.size(); ++i) po[i] = s * px[i] + c;
  });
  auto xi = x.impl();
  return make_result(x.shape(), std::move(data), {x}, name,
                     [xi, scale, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, g.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto px = gx.span<T>();
      const T s = static_cast<T>(scale);
      for (std::size_t i = 0; i < px.size(); ++i) px[i] = s * pg[i];
    });
    accumulate_grad(*xi, gx);
  });
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t d = 0; d < r; ++d) {
    const std::int64_t ea = d + a.size() >= r ? a[d + a.size() - r] : 1;
    const std::int64_t eb = d + b.size() >= r ? b[d + b.size() - r] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[d] = ea == 1 ? eb : ea;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }
Tensor add_scalar(const Tensor& a, double s) { return affine_scalar(a, 1.0, s, "add_scalar"); }
Tensor mul_scalar(const Tensor& a, double s) { return affine_scalar(a, s, 0.0, "mul_scalar"); }
Tensor rsub_scalar(double s, const Tensor& a) { return affine_scalar(a, -1.0, s, "rsub_scalar"); }

Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
  const int r = x.rank();
  Shape kept = x.shape();
  std::vector<bool> reduced(r, false);
  for (int a : axes) {
    const int ax = normalize_axis(a, r, "sum");
    reduced[ax] = true;
    kept[ax] = 1;
  }
  Shape out_shape;
  for (int d = 0; d < r; ++d)
    if (keepdim || !reduced[d]) out_shape.push_back(kept[d]);
  const auto sx = contiguous_strides(x.shape());
  const auto so = aligned_strides(kept, x.shape());
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(shape_numel(kept)));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for_each_index(x.shape(), sx, so,
                   [&](std::int64_t, std::int64_t ix, std::int64_t io) { po[io] += px[ix]; });
  });
  auto xi = x.impl();
  Shape in_shape = x.shape();
  return make_result(out_shape, std::move(data), {x}, "sum",
                     [xi, in_shape, sx, so, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, xi->data.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pgx = gx.span<T>();
      for_each_index(in_shape, sx, so,
                     [&](std::int64_t, std::int64_t ix, std::int64_t io) { pgx[ix] = pg[io]; });
    });
    accumulate_grad(*xi, gx);
  });
}

Tensor sum(const Tensor& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes, false);
}

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
  std::int64_t count = 1;
  for (int a : axes) count *= x.dim(a);
  if (count == 0) throw ShapeError("mean over empty extent");
  return mul_scalar(sum(x, axes, keepdim), 1.0 / static_cast<double>(count));
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto xi = x.impl();
  return make_result(shape, x.buffer(), {x}, "reshape",
                     [xi](const Buffer& g, const Buffer&) { accumulate_grad(*xi, g); });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of no tensors");
  const int r = xs[0].rank();
  axis = normalize_axis(axis, r, "concat");
  Shape out = xs[0].shape();
  out[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    require_same_dtype(xs[0], t, "concat");
    for (int d = 0; d < r; ++d)
      if (d != axis && t.dim(d) != xs[0].dim(d))
        throw ShapeError("concat: extent mismatch " + shape_str(t.shape()) + " vs " +
                         shape_str(xs[0].shape()));
    out[axis] += t.dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out[d];
  for (int d = axis + 1; d < r; ++d) inner *= out[d];
  const DType dt = xs[0].dtype();
  Buffer data(dt, static_cast<std::size_t>(shape_numel(out)));
  std::vector<std::int64_t> extents;
  for (const auto& t : xs) extents.push_back(t.dim(axis));
  const std::int64_t total_axis = out[axis];
  dispatch(dt, [&]<class T>() {
    auto po = data.span<T>();
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      auto px = xs[k].data<T>();
      const std::int64_t block = extents[k] * inner;
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(px.data() + o * block, block, po.data() + (o * total_axis + offset) * inner);
      offset += extents[k];
    }
  });
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& t : xs) impls.push_back(t.impl());
  return make_result(out, std::move(data), xs, "concat",
                     [impls, extents, outer, inner, total_axis, dt](const Buffer& g, const Buffer&) {
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        const std::int64_t block = extents[k] * inner;
        if (impls[k]->requires_grad) {
          Buffer gk(dt, impls[k]->data.size());
          auto pk = gk.span<T>();
          for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(pg.data() + (o * total_axis + offset) * inner, block,
                        pk.data() + o * block);
          accumulate_grad(*impls[k], gk);
        }
        offset += extents[k];
      }
    });
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end) {
  const int r = x.rank();
  axis = normalize_axis(axis, r, "slice");
  if (start < 0 || end > x.dim(axis) || start >= end)
    throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(x.shape()));
  Shape out = x.shape();
  out[axis] = end - start;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out[d];
  for (int d = axis + 1; d < r; ++d) inner *= out[d];
  const std::int64_t src_axis = x.dim(axis);
  const std::int64_t block = (end - start) * inner;
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(shape_numel(out)));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(px.data() + (o * src_axis + start) * inner, block, po.data() + o * block);
  });
  auto xi = x.impl();
  return make_result(out, std::move(data), {x}, "slice",
                     [xi, outer, inner, src_axis, start, block, dt](const Buffer& g, const Buffer&) {
    Buffer gx(dt, xi->data.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto pgx = gx.span<T>();
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(pg.data() + o * block, block, pgx.data() + (o * src_axis + start) * inner);
    });
    accumulate_grad(*xi, gx);
  });
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "gelu") return Activation::GELU;
  if (name == "swish") return Activation::Swish;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::ReLU: return "relu";
    case Activation::GELU: return "gelu";
    case Activation::Swish: return "swish";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

namespace {
constexpr double kGeluCoeff = 0.044715;
constexpr double kSqrt2OverPi = 0.7978845608028654;

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(x.numel()));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::size_t i = 0; i < po.size(); ++i) {
      const T v = px[i];
      switch (kind) {
        case Activation::ReLU: po[i] = v > 0 ? v : T(0); break;
        case Activation::Sigmoid: po[i] = stable_sigmoid(v); break;
        case Activation::Swish: po[i] = v * stable_sigmoid(v); break;
        case Activation::GELU: {
          const T u = T(kSqrt2OverPi) * (v + T(kGeluCoeff) * v * v * v);
          po[i] = T(0.5) * v * (T(1) + std::tanh(u));
          break;
        }
      }
    }
  });
  auto xi = x.impl();
  return make_result(x.shape(), std::move(data), {x}, activation_name(kind),
                     [xi, kind, dt](const Buffer& g, const Buffer& out) {
    Buffer gx(dt, g.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto px = std::as_const(xi->data).span<T>();
      auto py = out.span<T>();
      auto pgx = gx.span<T>();
      for (std::size_t i = 0; i < pgx.size(); ++i) {
        const T v = px[i];
        T d = 0;
        switch (kind) {
          case Activation::ReLU: d = v > 0 ? T(1) : T(0); break;
          case Activation::Sigmoid: d = py[i] * (T(1) - py[i]); break;
          case Activation::Swish: {
            const T s = stable_sigmoid(v);
            d = s + v * s * (T(1) - s);
            break;
          }
          case Activation::GELU: {
            const T u = T(kSqrt2OverPi) * (v + T(kGeluCoeff) * v * v * v);
            const T t = std::tanh(u);
            const T du = T(kSqrt2OverPi) * (T(1) + T(3 * kGeluCoeff) * v * v);
            d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
            break;
          }
        }
        pgx[i] = pg[i] * d;
      }
    });
    accumulate_grad(*xi, gx);
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  axis = normalize_axis(axis, r, "softmax");
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= x.dim(d);
  const std::int64_t n = x.dim(axis);
  const DType dt = x.dtype();
  Buffer data(dt, static_cast<std::size_t>(x.numel()));
  dispatch(dt, [&]<class T>() {
    auto px = x.data<T>();
    auto po = data.span<T>();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * n * inner + i;
        T mx = px[base];
        for (std::int64_t c = 1; c < n; ++c) mx = std::max(mx, px[base + c * inner]);
        T s = 0;
        for (std::int64_t c = 0; c < n; ++c) {
          const T e = std::exp(px[base + c * inner] - mx);
          po[base + c * inner] = e;
          s += e;
        }
        for (std::int64_t c = 0; c < n; ++c) po[base + c * inner] /= s;
      }
    }
  });
  auto xi = x.impl();
  return make_result(x.shape(), std::move(data), {x}, "softmax",
                     [xi, outer, inner, n, dt](const Buffer& g, const Buffer& out) {
    Buffer gx(dt, g.size());
    dispatch(dt, [&]<class T>() {
      auto pg = g.span<T>();
      auto py = out.span<T>();
      auto pgx = gx.span<T>();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * n * inner + i;
          T dot = 0;
          for (std::int64_t c = 0; c < n; ++c) dot += pg[base + c * inner] * py[base + c * inner];
          for (std::int64_t c = 0; c < n; ++c) {
            const std::int64_t k = base + c * inner;
            pgx[k] = py[k] * (pg[k] - dot);
          }
        }
      }
    });
    accumulate_grad(*xi, gx);
  });
}

}  // namespace edunet
