#pragma once

#include <span>
#include <vector>

#include "lava/tensor.h"

namespace lava {

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long step_count = 0;
};

// Sizes the moment buffers to match `params`.
AdamState make_adam_state(std::span<const Tensor> params);

// Bias-corrected Adam update, in place, reading each parameter's grad.
// Parameters without an accumulated grad are treated as having zero grad.
void adam_step(std::span<Tensor> params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Linear warmup to `peak` over `warmup` steps, then inverse square-root decay.
double warmup_inverse_sqrt(long step, double peak, long warmup);

}  // namespace lava
