#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lip2us/tensor.hpp"

namespace lip2us {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates, one pair per parameter, plus the step count.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
  AdamOptions options;

  static AdamState for_params(std::span<const Tensor> params, AdamOptions options = {});
};

/// One bias-corrected Adam update of params (in place) from grads.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

/// Same update, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace lip2us
