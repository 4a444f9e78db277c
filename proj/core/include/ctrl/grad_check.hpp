#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctrl/tensor.hpp"

namespace ctrl {

/// A differentiable map from a list of tensors to one tensor, paired with its
/// hand-written backward rule.
struct DifferentiableOp {
  std::string name;
  std::function<Tensor(std::span<const Tensor>)> forward;
  /// Given the inputs and dL/d(output), returns dL/d(input) for every input.
  std::function<std::vector<Tensor>(std::span<const Tensor>, const Tensor&)> backward;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Seed for the random projection that turns the op output into a scalar.
  std::uint64_t seed = 17;
  /// Coordinates for which this returns true are not probed (input index,
  /// flat coordinate, current value). Used to stay away from kinks.
  std::function<bool(std::size_t, std::size_t, double)> skip;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probed = 0;
  std::size_t skipped = 0;
};

/// Compares the analytic gradient of L = sum(out * R), R a fixed random
/// tensor, against central finite differences on every input coordinate.
/// The error per coordinate is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

/// Relative-error measure used by grad_check.
double relative_error(double analytic, double numeric);

}  // namespace ctrl
