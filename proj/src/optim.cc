#include "lava/optim.h"

#include <algorithm>
#include <cmath>

namespace lava {

AdamState make_adam_state(std::span<const Tensor> params) {
  AdamState state;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ContractError("adam_step: state does not match parameter list");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel()) {
      throw DimensionError("adam_step: moment buffer size mismatch");
    }
    if (!p.has_grad()) {
      // Zero gradient: moments decay, and the update is driven only by
      // residual momentum.
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] *= beta1;
        v[i] *= beta2;
      }
    } else {
      const auto g = p.grad();
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      }
    }
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double warmup_inverse_sqrt(long step, double peak, long warmup) {
  const double s = static_cast<double>(std::max<long>(step, 1));
  if (warmup <= 0) return peak / std::sqrt(s);
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

}  // namespace lava
