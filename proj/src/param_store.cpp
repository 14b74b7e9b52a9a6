#include "edunet/param_store.hpp"

#include <cmath>

#include "edunet/rng.hpp"

namespace edunet {

Tensor& ParamStore::add_param(const std::string& name, Tensor t) {
  if (param_index_.count(name) || buffer_index_.count(name))
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  param_index_[name] = params_.size();
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
  if (param_index_.count(name) || buffer_index_.count(name))
    throw std::invalid_argument("duplicate buffer name '" + name + "'");
  t.set_requires_grad(false);
  buffer_index_[name] = buffers_.size();
  buffers_.emplace_back(name, std::move(t));
  return buffers_.back().second;
}

Tensor& ParamStore::param(const std::string& name) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return params_[it->second].second;
}

const Tensor& ParamStore::param(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return params_[it->second].second;
}

Tensor& ParamStore::buffer(const std::string& name) {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw std::out_of_range("no buffer named '" + name + "'");
  return buffers_[it->second].second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw std::out_of_range("no buffer named '" + name + "'");
  return buffers_[it->second].second;
}

std::int64_t ParamStore::num_scalars() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParamStore ParamStore::to(DType dtype) const {
  ParamStore out;
  for (const auto& [name, t] : params_) out.add_param(name, t.detach().to(dtype));
  for (const auto& [name, t] : buffers_) out.add_buffer(name, t.detach().to(dtype));
  return out;
}

DType ParamStore::dtype() const {
  if (!params_.empty()) return params_.front().second.dtype();
  if (!buffers_.empty()) return buffers_.front().second.dtype();
  return DType::F32;
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& [_, t] : params_) t.set_requires_grad(on);
}

Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng, DType dtype) {
  Tensor t = Tensor::zeros(shape, dtype);
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  auto& buf = t.mutable_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf.set(i, rng.uniform(-bound, bound));
  return t;
}

}  // namespace edunet
