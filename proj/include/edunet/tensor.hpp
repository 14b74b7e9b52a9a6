#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace edunet {

using Shape = std::vector<std::int64_t>;

enum class DType : std::uint8_t { F32, F64 };

const char* dtype_name(DType dt);
std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when an op receives tensors whose shapes or dtypes do not fit its contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/Inf or the autodiff graph is misused.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Typed flat buffer. Exactly one of the two vectors is in use, selected by dtype.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t n);

  DType dtype() const { return dtype_; }
  std::size_t size() const { return dtype_ == DType::F32 ? f32_.size() : f64_.size(); }

  template <class T>
  std::span<T> span();
  template <class T>
  std::span<const T> span() const;

  double get(std::size_t i) const { return dtype_ == DType::F32 ? f32_[i] : f64_[i]; }
  void set(std::size_t i, double v) {
    if (dtype_ == DType::F32)
      f32_[i] = static_cast<float>(v);
    else
      f64_[i] = v;
  }
  void fill(double v);
  Buffer cast(DType dtype) const;

 private:
  DType dtype_ = DType::F32;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

template <>
inline std::span<float> Buffer::span<float>() {
  if (dtype_ != DType::F32) throw ShapeError("buffer is not f32");
  return f32_;
}
template <>
inline std::span<double> Buffer::span<double>() {
  if (dtype_ != DType::F64) throw ShapeError("buffer is not f64");
  return f64_;
}
template <>
inline std::span<const float> Buffer::span<float>() const {
  if (dtype_ != DType::F32) throw ShapeError("buffer is not f32");
  return f32_;
}
template <>
inline std::span<const double> Buffer::span<double>() const {
  if (dtype_ != DType::F64) throw ShapeError("buffer is not f64");
  return f64_;
}

/// Calls `fn.template operator()<T>()` with T = float or double according to dtype.
template <class F>
decltype(auto) dispatch(DType dt, F&& fn) {
  if (dt == DType::F32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

struct TensorImpl;

/// Backward rule: receives the cotangent of the op output and the output values.
using BackwardFn = std::function<void(const Buffer& grad_out, const Buffer& out)>;

/// A recorded op. Owned by the tensor it produced; holds its inputs alive until backward
/// consumes it.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  bool requires_grad = false;
  bool has_grad = false;
  Buffer grad;
  std::shared_ptr<Node> grad_fn;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, DType dtype = DType::F32);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::F32);
  static Tensor ones(const Shape& shape, DType dtype = DType::F32) { return full(shape, 1.0, dtype); }
  static Tensor from_vector(const Shape& shape, const std::vector<double>& values,
                            DType dtype = DType::F32);
  static Tensor scalar(double value, DType dtype = DType::F32) { return full({}, value, dtype); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  DType dtype() const { return impl_->data.dtype(); }

  template <class T>
  std::span<const T> data() const {
    return std::as_const(impl_->data).template span<T>();
  }
  /// Direct write access. Only for leaves (parameters, inputs, buffers) outside any live graph.
  template <class T>
  std::span<T> mutable_data() {
    return impl_->data.template span<T>();
  }
  const Buffer& buffer() const { return impl_->data; }
  Buffer& mutable_buffer() { return impl_->data; }

  double item() const;
  double at(std::int64_t flat) const { return impl_->data.get(static_cast<std::size_t>(flat)); }
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_->has_grad; }
  /// Gradient as a fresh tensor without graph; zeros if none was accumulated.
  Tensor grad() const;
  const Buffer& grad_buffer() const { return impl_->grad; }
  void zero_grad();

  /// New leaf sharing no storage or graph with this one.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  /// Runs reverse-mode accumulation from this scalar. See edunet::backward.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Reverse pass from a scalar loss. Seeds d(loss)=1, walks the recorded graph in reverse
/// topological order, accumulates into every requires_grad tensor, then releases the
/// graph. A second call on the same loss throws.
void backward(const Tensor& loss);

/// Adds `grad` into t's gradient buffer (allocating it on first use) if t requires grad.
void accumulate_grad(TensorImpl& t, const Buffer& grad);

/// Builds the result tensor of an op and records a backward node when any input
/// requires grad.
Tensor make_result(Shape shape, Buffer data, const std::vector<Tensor>& inputs, const char* op,
                   BackwardFn backward_fn);

bool any_requires_grad(const std::vector<Tensor>& inputs);

/// Throws NumericError if any element is NaN or infinite.
void check_finite(const Tensor& t, const std::string& where);

}  // namespace edunet
