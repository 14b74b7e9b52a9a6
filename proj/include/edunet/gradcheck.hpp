#pragma once

#include <functional>
#include <string>
#include <vector>

#include "edunet/tensor.hpp"

namespace edunet {

class ParamStore;

/// A function of a list of leaf tensors. It must work for both dtypes: the checker calls
/// it with the leaves in their own dtype for the analytic gradient and with f64 copies for
/// the finite differences.
using LeafFn = std::function<Tensor(const std::vector<Tensor>& leaves)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Pass threshold; 0 selects 1e-5 for f64 leaves and 1e-3 for f32 leaves.
  double tol = 0.0;
  /// Gradient magnitudes below this are compared absolutely.
  double floor = 1e-6;
  /// Per-leaf cap on checked coordinates (sampled without replacement); <0 checks all.
  std::int64_t max_coords = -1;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::int64_t coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> inputs;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients against central finite differences. Non-scalar outputs
/// are reduced with a fixed random projection. The error for one leaf is
/// max|analytic - numeric| / max(max|analytic|, max|numeric|, floor).
GradCheckReport grad_check(const LeafFn& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opt = {});

/// New store with the same names whose parameters are `leaves[offset...]` (shared handles)
/// and whose buffers are copies of the prototype's buffers in the leaves' dtype.
ParamStore rebind_params(const ParamStore& proto, const std::vector<Tensor>& leaves,
                         std::size_t offset = 0);

}  // namespace edunet
