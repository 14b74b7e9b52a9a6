#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "edunet/gradcheck.hpp"
#include "edunet/rng.hpp"

namespace edunet {

/// One registered differentiable op or composite. `run` builds random inputs of the given
/// dtype from `rng` and returns the finite-difference report.
struct GradCheckCase {
  std::string name;
  bool check_f32 = true;  ///< also run with 32-bit leaves
  std::function<GradCheckReport(DType, Rng&)> run;
};

/// Every primitive op, every block, MC-EGA, the Dice loss and the full tiny model on a
/// 1x1x16x16 input. The broken-rule case (a backward that is deliberately wrong) is a
/// negative control and only included on request.
std::vector<GradCheckCase> gradcheck_cases(bool include_broken_rule = false);

struct GradCheckRow {
  std::string name;
  DType dtype = DType::F64;
  GradCheckReport report;
  double seconds = 0.0;
};

/// Runs the selected cases (all when `only` is empty; unknown names throw
/// std::invalid_argument). Each case draws from Rng(seed).fork(name).
std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<std::string>& only,
                                              std::uint64_t seed, bool include_broken_rule = false,
                                              const std::function<void(const GradCheckRow&)>& progress = {});

}  // namespace edunet
