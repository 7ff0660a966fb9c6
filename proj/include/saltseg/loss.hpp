#pragma once

#include <cmath>
#include <cstddef>

#include "saltseg/kernels.hpp"
#include "saltseg/tensor.hpp"

namespace saltseg {

/// How the summed per-element loss is normalised.
enum class Reduction {
  all_elements,  // divide by m * n (batch times pixels per sample)
  per_sample,    // divide by m only, summing over each sample's pixels
};

struct LossValue {
  double mean_loss = 0.0;
  Tensor per_pixel;
};

struct LossAndGrad {
  LossValue loss;
  Tensor grad_logits;
};

namespace detail {

inline void check_targets(const Tensor& logits, const Tensor& targets, const char* what) {
  require_same_dims(logits.dims(), targets.dims(), what);
  for (double z : targets.values())
    if (z != 0.0 && z != 1.0)
      throw ValidationError(std::string(what) + ": target value " + std::to_string(z) +
                            " is not in {0,1}");
}

}  // namespace detail

// Overflow-free form of  z*(-log s(x)) + (1-z)*(-log(1 - s(x))).
inline double sigmoid_cross_entropy(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

/// Elementwise sigmoid cross-entropy of pre-sigmoid logits against {0,1} targets.
inline Tensor sigmoid_cross_entropy(const Tensor& logits, const Tensor& targets) {
  detail::check_targets(logits, targets, "sigmoid_cross_entropy");
  Tensor out(logits.dims());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = sigmoid_cross_entropy(logits[i], targets[i]);
  return out;
}

/// Reduce-mean loss and its gradient with respect to the logits. The batch
/// is axis 0.
inline LossAndGrad loss_and_grad(const Tensor& logits, const Tensor& targets,
                                 Reduction reduction = Reduction::all_elements) {
  if (logits.empty() || logits.rank() == 0) throw ValidationError("loss_and_grad: empty batch");
  LossAndGrad out;
  out.loss.per_pixel = sigmoid_cross_entropy(logits, targets);
  const double denom = reduction == Reduction::all_elements
                           ? static_cast<double>(logits.size())
                           : static_cast<double>(logits.dim(0));
  out.loss.mean_loss = out.loss.per_pixel.sum() / denom;
  out.grad_logits = Tensor(logits.dims());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.grad_logits[i] = (sigmoid(logits[i]) - targets[i]) / denom;
  return out;
}

}  // namespace saltseg
