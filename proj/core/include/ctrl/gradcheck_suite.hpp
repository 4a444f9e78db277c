#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctrl/grad_check.hpp"

namespace ctrl {

struct GradCheckCase {
  DifferentiableOp op;
  std::vector<Tensor> inputs;
  GradCheckOptions options;
};

/// Gradient checks for every differentiable op and layer at desk-scale shapes
/// (2 input channels, length 7, 8 output channels), plus the embedding
/// control -> conv -> CNN control chain. If `faulty_op` names a case, its
/// backward rule is deliberately perturbed (negative control).
std::vector<GradCheckCase> standard_grad_checks(std::uint64_t seed, const std::string& faulty_op = "");

/// Names of the cases produced by standard_grad_checks.
std::vector<std::string> standard_grad_check_names();

}  // namespace ctrl
