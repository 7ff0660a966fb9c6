#pragma once

#include <cstdint>

#include "saltseg/adadelta.hpp"
#include "saltseg/loss.hpp"

namespace saltseg {

struct TrainConfig {
  std::uint64_t epochs = 1;
  std::uint64_t batch_size = 100;
  double lr_scale = 0.01;
  double rho = 0.95;
  double eps = 1e-6;
  std::uint64_t seed = 0;
  // 1.0 trains on the whole dataset with no held-out split.
  double train_fraction = 0.8;
  // Keeps the ReLU on the last convolution in front of the output sigmoid.
  bool faithful_table1 = false;
  std::uint64_t log_every = 1;
  // 0 disables periodic saves; the final state is always returned.
  std::uint64_t checkpoint_every = 0;
  Reduction reduction = Reduction::all_elements;

  AdadeltaConfig optimizer() const { return {rho, eps, lr_scale}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws ValidationError when a numeric field is out of range.
inline void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(cfg.lr_scale > 0.0)) throw ValidationError("lr_scale must be positive");
  if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) throw ValidationError("rho must lie in (0, 1)");
  if (!(cfg.eps > 0.0)) throw ValidationError("eps must be positive");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0))
    throw ValidationError("train_fraction must lie in (0, 1]");
  if (cfg.log_every == 0) throw ValidationError("log_every must be positive");
}

}  // namespace saltseg
