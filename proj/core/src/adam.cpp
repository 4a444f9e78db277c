#include "ctrl/adam.hpp"

#include <cmath>
#include <utility>
#include <vector>

#include "ctrl/error.hpp"
#include "ctrl/model.hpp"

namespace ctrl {

namespace {

bool updatable(const Param& p, GroupSet active) {
  return p.trainable && p.group != Group::kEmb && active.contains(p.group);
}

void update_param(Param& p, std::span<const double> g, AdamState& state, double c1, double c2) {
  const AdamHyper& h = state.hyper;
  auto it = state.moments.find(p.name);
  if (it == state.moments.end()) {
    it = state.moments.emplace(p.name, AdamState::Moments{Tensor(p.value.shape()), Tensor(p.value.shape())}).first;
  }
  auto m = it->second.m.data();
  auto v = it->second.v.data();
  auto w = p.value.data();
  for (std::size_t j = 0; j < w.size(); ++j) {
    m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
    v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
    const double m_hat = m[j] / c1;
    const double v_hat = v[j] / c2;
    w[j] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

std::pair<double, double> advance(AdamState& state) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  return {1.0 - std::pow(state.hyper.beta1, t), 1.0 - std::pow(state.hyper.beta2, t)};
}

}  // namespace

void adam_step(std::span<Param* const> params, std::span<const Tensor* const> grads, AdamState& state,
               GroupSet active) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                     " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (updatable(*params[i], active) && grads[i]->size() != params[i]->value.size()) {
      throw ShapeError("adam_step: gradient for '" + params[i]->name + "' has shape " +
                       shape_to_string(grads[i]->shape()) + ", parameter has " +
                       shape_to_string(params[i]->value.shape()));
    }
  }
  const auto [c1, c2] = advance(state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (updatable(*params[i], active)) update_param(*params[i], grads[i]->data(), state, c1, c2);
  }
}

void adam_step(Model& model, AdamState& state, GroupSet active) {
  const std::vector<Param*> params = model.params();
  const auto [c1, c2] = advance(state);
  std::vector<double> zeros;
  for (Param* p : params) {
    if (!updatable(*p, active)) continue;
    if (p->value.has_grad()) {
      update_param(*p, p->value.grad(), state, c1, c2);
    } else {
      zeros.assign(p->value.size(), 0.0);
      update_param(*p, zeros, state, c1, c2);
    }
  }
}

}  // namespace ctrl
