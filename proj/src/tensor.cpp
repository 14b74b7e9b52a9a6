#include "edunet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace edunet {

const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Buffer::Buffer(DType dtype, std::size_t n) : dtype_(dtype) {
  if (dtype == DType::F32)
    f32_.assign(n, 0.0f);
  else
    f64_.assign(n, 0.0);
}

void Buffer::fill(double v) {
  if (dtype_ == DType::F32)
    std::fill(f32_.begin(), f32_.end(), static_cast<float>(v));
  else
    std::fill(f64_.begin(), f64_.end(), v);
}

Buffer Buffer::cast(DType dtype) const {
  if (dtype == dtype_) return *this;
  Buffer out(dtype, size());
  for (std::size_t i = 0; i < size(); ++i) out.set(i, get(i));
  return out;
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = Buffer(dtype, static_cast<std::size_t>(shape_numel(shape)));
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  t.impl_->data.fill(value);
  return t;
}

Tensor Tensor::from_vector(const Shape& shape, const std::vector<double>& values, DType dtype) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_vector: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  Tensor t = zeros(shape, dtype);
  for (std::size_t i = 0; i < values.size(); ++i) t.impl_->data.set(i, values[i]);
  return t;
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data.get(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(impl_->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = impl_->data.get(i);
  return out;
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  Tensor g = zeros(shape(), dtype());
  if (impl_->has_grad) g.impl_->data = impl_->grad;
  return g;
}

void Tensor::zero_grad() {
  impl_->has_grad = false;
  impl_->grad = Buffer();
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dtype) const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data.cast(dtype);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

void Tensor::backward() const { edunet::backward(*this); }

void accumulate_grad(TensorImpl& t, const Buffer& grad) {
  if (!t.requires_grad) return;
  if (grad.size() != t.data.size())
    throw ShapeError("gradient size mismatch for tensor " + shape_str(t.shape));
  if (!t.has_grad) {
    t.grad = grad.cast(t.data.dtype());
    t.has_grad = true;
    return;
  }
  dispatch(t.data.dtype(), [&]<class T>() {
    auto dst = t.grad.span<T>();
    auto src = grad.span<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

Tensor make_result(Shape shape, Buffer data, const std::vector<Tensor>& inputs, const char* op,
                   BackwardFn backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (any_requires_grad(inputs)) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->op = op;
    for (const auto& t : inputs)
      if (t.defined()) node->inputs.push_back(t.impl());
    node->backward = std::move(backward_fn);
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ShapeError("backward on undefined tensor");
  if (loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  const auto& root = loss.impl();
  if (root->grad_fn && root->grad_fn->consumed)
    throw NumericError("backward called twice on the same graph");
  if (!root->requires_grad) throw NumericError("loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->grad_fn.get();
    if (node && !node->consumed && next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  Buffer seed(root->data.dtype(), 1);
  seed.fill(1.0);
  accumulate_grad(*root, seed);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& impl = *it;
    if (impl->grad_fn && !impl->grad_fn->consumed && impl->has_grad)
      impl->grad_fn->backward(impl->grad, impl->data);
  }

  std::vector<std::shared_ptr<Node>> nodes;
  for (auto& impl : order)
    if (impl->grad_fn) nodes.push_back(impl->grad_fn);
  order.clear();
  for (auto& node : nodes) {
    node->consumed = true;
    node->backward = nullptr;
    node->inputs.clear();
  }
}

void check_finite(const Tensor& t, const std::string& where) {
  const Buffer& b = t.buffer();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!std::isfinite(b.get(i))) throw NumericError("non-finite value in " + where);
  }
}

}  // namespace edunet
