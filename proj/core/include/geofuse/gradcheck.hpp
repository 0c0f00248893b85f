#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geofuse/tensor.hpp"

namespace geofuse {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite-difference verification of reverse-mode gradients.
// loss_fn must rebuild the graph from the current parameter values on every
// call. Checks a sampled subset of entries per parameter plus one random
// full-parameter direction.
double finite_difference_error(const std::function<Tensor()>& loss_fn,
                               const std::vector<Tensor>& params, int samples_per_tensor = 6,
                               double step = 1e-5, uint64_t seed = 17);

// Named suites. module in {"tensornn", "pipeline", "supervision", "all"}.
std::vector<GradCheckResult> run_gradchecks(const std::string& module = "all");

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace geofuse
