#include "edunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edunet/ops.hpp"
#include "edunet/param_store.hpp"
#include "edunet/rng.hpp"

namespace edunet {
namespace {

Tensor projection_weights(const Shape& shape, std::uint64_t seed, DType dtype) {
  Rng rng = Rng(seed).fork("gradcheck.projection");
  Tensor r = Tensor::zeros(shape, dtype);
  auto& b = r.mutable_buffer();
  for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng.uniform(0.5, 1.5));
  return r;
}

Tensor scalarize(const Tensor& out, std::uint64_t seed) {
  if (out.numel() == 1) return reshape(out, {});
  return sum(mul(out, projection_weights(out.shape(), seed, out.dtype())));
}

double eval_scalar(const LeafFn& fn, const std::vector<Tensor>& leaves, std::uint64_t seed) {
  return scalarize(fn(leaves), seed).item();
}

}  // namespace

GradCheckReport grad_check(const LeafFn& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opt) {
  if (inputs.empty()) throw std::invalid_argument("grad_check: no inputs");
  GradCheckReport report;
  const DType dt = inputs.front().dtype();
  report.tol = opt.tol > 0 ? opt.tol : (dt == DType::F64 ? 1e-5 : 1e-3);

  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(t.detach().set_requires_grad(true));
  Tensor loss = scalarize(fn(leaves), opt.seed);
  backward(loss);

  std::vector<Tensor> numeric_leaves;
  for (const auto& t : inputs) numeric_leaves.push_back(t.detach().to(DType::F64));

  Rng coord_rng = Rng(opt.seed).fork("gradcheck.coords");
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    GradCheckEntry entry;
    entry.name = k < opt.names.size() ? opt.names[k] : "input" + std::to_string(k);
    const Tensor analytic = leaves[k].grad();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(analytic.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.max_coords >= 0 && static_cast<std::int64_t>(coords.size()) > opt.max_coords) {
      coord_rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(opt.max_coords));
      std::sort(coords.begin(), coords.end());
    }
    auto& buf = numeric_leaves[k].mutable_buffer();
    double max_diff = 0, max_mag = 0;
    for (auto i : coords) {
      const auto idx = static_cast<std::size_t>(i);
      const double orig = buf.get(idx);
      const double a = analytic.at(i);
      auto at = [&](double h) {
        buf.set(idx, orig + h);
        return eval_scalar(fn, numeric_leaves, opt.seed);
      };
      // Fourth-order central stencil.
      auto central = [&](double h) {
        const double d = 8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h));
        buf.set(idx, orig);
        return d / (12 * h);
      };
      double num = central(opt.step);
      // A kink (relu, max) inside the stencil spoils the estimate; retry on narrower ones.
      for (double h = opt.step * 0.1; h >= opt.step * 0.01; h *= 0.1) {
        const double scale = std::max({std::fabs(a), std::fabs(num), opt.floor});
        if (std::fabs(a - num) / scale <= 0.01 * report.tol) break;
        const double narrow = central(h);
        if (std::fabs(a - narrow) < std::fabs(a - num)) num = narrow;
      }
      max_diff = std::max(max_diff, std::fabs(a - num));
      max_mag = std::max({max_mag, std::fabs(a), std::fabs(num)});
    }
    entry.coords_checked = static_cast<std::int64_t>(coords.size());
    entry.max_rel_error = max_diff / std::max(max_mag, opt.floor);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.inputs.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < report.tol;
  return report;
}

ParamStore rebind_params(const ParamStore& proto, const std::vector<Tensor>& leaves,
                         std::size_t offset) {
  if (leaves.size() < offset + proto.params().size())
    throw std::invalid_argument("rebind_params: not enough leaves");
  ParamStore out;
  const DType dt = leaves.empty() ? proto.dtype() : leaves[offset].dtype();
  std::size_t i = offset;
  for (const auto& [name, _] : proto.params()) {
    Tensor t = leaves[i++];
    const bool rg = t.requires_grad();
    Tensor& added = out.add_param(name, t);
    added.set_requires_grad(rg);
  }
  for (const auto& [name, t] : proto.buffers()) out.add_buffer(name, t.detach().to(dt));
  return out;
}

}  // namespace edunet
