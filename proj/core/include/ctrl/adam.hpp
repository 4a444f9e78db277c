#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "ctrl/layers.hpp"

namespace ctrl {

class Model;

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments keyed by parameter name plus the step counter. Moments are created
/// lazily the first time a parameter is updated, so parameters that are never
/// active keep no (i.e. zero) moments.
struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, Moments, std::less<>> moments;

  explicit AdamState(AdamHyper h = {}) : hyper(h) {}
};

/// One bias-corrected Adam update of every trainable parameter whose group is
/// in `active`. Everything else, including its moments, is left untouched.
/// EMB parameters are never updated. `grads[i]` belongs to `params[i]`.
void adam_step(std::span<Param* const> params, std::span<const Tensor* const> grads, AdamState& state,
               GroupSet active);

/// Same, reading each parameter's own gradient buffer.
void adam_step(Model& model, AdamState& state, GroupSet active);

}  // namespace ctrl
