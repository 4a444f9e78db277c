#include "ctrl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ctrl/error.hpp"

namespace ctrl {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double projected(const Tensor& out, const Tensor& projection) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * projection[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  const Tensor out = op.forward(inputs);
  Tensor projection(out.shape());
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : projection.data()) v = dist(rng);

  const std::vector<Tensor> analytic = op.backward(inputs, projection);
  if (analytic.size() != inputs.size()) {
    throw ShapeError(op.name + ": backward returned " + std::to_string(analytic.size()) + " gradients for " +
                     std::to_string(inputs.size()) + " inputs");
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (analytic[k].shape() != inputs[k].shape()) {
      throw ShapeError(op.name + ": gradient " + std::to_string(k) + " has shape " +
                       shape_to_string(analytic[k].shape()) + ", input has " + shape_to_string(inputs[k].shape()));
    }
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double original = inputs[k][i];
      if (options.skip && options.skip(k, i, original)) {
        ++result.skipped;
        continue;
      }
      inputs[k][i] = original + options.epsilon;
      const double plus = projected(op.forward(inputs), projection);
      inputs[k][i] = original - options.epsilon;
      const double minus = projected(op.forward(inputs), projection);
      inputs[k][i] = original;

      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[k][i], numeric));
      ++result.probed;
    }
  }
  return result;
}

}  // namespace ctrl
