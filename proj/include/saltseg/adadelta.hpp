#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "saltseg/tensor.hpp"

namespace saltseg {

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  // Multiplies every update; ADADELTA itself has no global learning rate.
  double lr_scale = 0.01;
};

/// Running averages for one parameter tensor.
struct AdadeltaSlot {
  Tensor acc_grad_sq;    // E[g^2]
  Tensor acc_update_sq;  // E[dx^2]

  friend bool operator==(const AdadeltaSlot&, const AdadeltaSlot&) = default;
};

struct OptimizerState {
  AdadeltaConfig config;
  std::vector<AdadeltaSlot> slots;  // one per parameter tensor, same order

  static OptimizerState zeros_like(const std::vector<const Tensor*>& params,
                                   AdadeltaConfig config) {
    OptimizerState state{config, {}};
    state.slots.reserve(params.size());
    for (const Tensor* p : params) state.slots.push_back({Tensor(p->dims()), Tensor(p->dims())});
    return state;
  }
};

/// One ADADELTA update, in place. Nothing is modified when the gradient
/// holds a non-finite value.
inline void adadelta_step(Tensor& param, const Tensor& grad, AdadeltaSlot& slot,
                          const AdadeltaConfig& cfg) {
  require_same_dims(param.dims(), grad.dims(), "adadelta_step grad");
  require_same_dims(param.dims(), slot.acc_grad_sq.dims(), "adadelta_step acc_grad_sq");
  require_same_dims(param.dims(), slot.acc_update_sq.dims(), "adadelta_step acc_update_sq");
  if (!grad.all_finite()) throw NumericError("adadelta_step: non-finite gradient");
  const double rho = cfg.rho, eps = cfg.eps;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double& acc_g = slot.acc_grad_sq[i];
    double& acc_dx = slot.acc_update_sq[i];
    acc_g = rho * acc_g + (1.0 - rho) * g * g;
    const double dx = -(std::sqrt(acc_dx + eps) / std::sqrt(acc_g + eps)) * g;
    acc_dx = rho * acc_dx + (1.0 - rho) * dx * dx;
    param[i] += cfg.lr_scale * dx;
  }
}

}  // namespace saltseg
