#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edunet/tensor.hpp"

namespace edunet {

class Rng;

/// Named, insertion-ordered collection of trainable tensors plus non-trainable buffers
/// (norm running statistics). Names are dotted paths such as "global.stage0.block0.dw.weight".
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add_param(const std::string& name, Tensor t);
  Tensor& add_buffer(const std::string& name, Tensor t);

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;
  bool has_param(const std::string& name) const { return param_index_.count(name) != 0; }
  bool has_buffer(const std::string& name) const { return buffer_index_.count(name) != 0; }

  const std::vector<Entry>& params() const { return params_; }
  std::vector<Entry>& params() { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }
  std::vector<Entry>& buffers() { return buffers_; }

  std::int64_t num_scalars() const;
  void zero_grad();
  /// Deep copy with every tensor converted to `dtype`.
  ParamStore to(DType dtype) const;
  ParamStore clone() const { return to(dtype()); }
  DType dtype() const;
  void set_requires_grad(bool on);

 private:
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
};

/// Prefix view into a ParamStore used by block initializers and forwards.
class Scope {
 public:
  Scope(ParamStore& store, std::string prefix) : store_(&store), prefix_(std::move(prefix)) {}

  Scope sub(const std::string& name) const { return Scope(*store_, join(name)); }
  Tensor& param(const std::string& name) const { return store_->param(join(name)); }
  Tensor& buffer(const std::string& name) const { return store_->buffer(join(name)); }
  bool has_param(const std::string& name) const { return store_->has_param(join(name)); }
  Tensor& add_param(const std::string& name, Tensor t) const {
    return store_->add_param(join(name), std::move(t));
  }
  Tensor& add_buffer(const std::string& name, Tensor t) const {
    return store_->add_buffer(join(name), std::move(t));
  }
  const std::string& prefix() const { return prefix_; }
  ParamStore& store() const { return *store_; }
  DType dtype() const { return store_->dtype(); }

 private:
  std::string join(const std::string& name) const {
    return prefix_.empty() ? name : prefix_ + "." + name;
  }
  ParamStore* store_;
  std::string prefix_;
};

/// Disables gradient recording on every parameter for the guard's lifetime.
class InferenceGuard {
 public:
  explicit InferenceGuard(ParamStore& store) : store_(store) { store_.set_requires_grad(false); }
  ~InferenceGuard() { store_.set_requires_grad(true); }
  InferenceGuard(const InferenceGuard&) = delete;
  InferenceGuard& operator=(const InferenceGuard&) = delete;

 private:
  ParamStore& store_;
};

// Initializers. Kaiming-uniform over fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng, DType dtype);

}  // namespace edunet
