#pragma once

// Central finite-difference verification of every hand-written backward
// pass. Only forward functions feed the numeric side.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "saltseg/kernels.hpp"
#include "saltseg/loss.hpp"
#include "saltseg/model.hpp"

namespace saltseg {

struct GradCheckReport {
  std::string name;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return cases > 0 && max_rel_error < tolerance; }
};

/// ||a - b|| / max(||a||, ||b||); zero when both vanish.
inline double relative_error(const Tensor& analytic, const Tensor& numeric) {
  require_same_dims(analytic.dims(), numeric.dims(), "relative_error");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nb += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

/// d f / d x by central differences, perturbing x in place and restoring it.
inline Tensor numeric_gradient(const std::function<double()>& f, Tensor& x, double step = 1e-5) {
  Tensor grad(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor random_tensor(Dims dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

// Moves values within `gap` of zero out to +-gap..2*gap.
inline void avoid_kink(Tensor& t, double gap) {
  for (auto& v : t.values())
    if (std::abs(v) < gap) v = v < 0 ? -gap - std::abs(v) : gap + std::abs(v);
}

// True when every 2x2 window has a unique maximum by at least `gap`.
inline bool pool_windows_separated(const Tensor& x, double gap) {
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t y = 0; y < x.dim(2); y += 2)
        for (std::size_t xx = 0; xx < x.dim(3); xx += 2) {
          double v[4] = {x.at(n, c, y, xx), x.at(n, c, y, xx + 1), x.at(n, c, y + 1, xx),
                         x.at(n, c, y + 1, xx + 1)};
          std::sort(v, v + 4);
          if (v[3] - v[2] < gap) return false;
        }
  return true;
}

// Walks the network and reports whether every ReLU input is at least `gap`
// from zero and every pooling window with a positive maximum wins by `gap`.
// Finite differences across such points measure the kink, not the slope.
inline bool clear_of_kinks(const Model& model, const Tensor& batch, double gap) {
  Tensor x = batch;
  std::size_t conv = 0;
  for (const auto& l : model.spec().layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        Tensor z = conv2d_forward(x, model.params()[conv++]);
        if (l.activation == Activation::relu) {
          for (double v : z.values())
            if (std::abs(v) < gap) return false;
          z = relu(z);
        } else if (l.activation == Activation::sigmoid) {
          z = sigmoid(z);
        }
        x = std::move(z);
        break;
      }
      case LayerKind::maxpool:
        for (std::size_t n = 0; n < x.dim(0); ++n)
          for (std::size_t c = 0; c < x.dim(1); ++c)
            for (std::size_t y = 0; y < x.dim(2); y += 2)
              for (std::size_t xx = 0; xx < x.dim(3); xx += 2) {
                double v[4] = {x.at(n, c, y, xx), x.at(n, c, y, xx + 1), x.at(n, c, y + 1, xx),
                               x.at(n, c, y + 1, xx + 1)};
                std::sort(v, v + 4);
                if (v[3] > 0.0 && v[3] - v[2] < gap) return false;
              }
        x = maxpool2x2_forward(x).first;
        break;
      case LayerKind::upsample:
      case LayerKind::downsample:
        x = resize_nearest_forward(x, l.target_h, l.target_w);
        break;
      case LayerKind::output:
        break;
    }
  }
  return true;
}

}  // namespace detail

inline GradCheckReport check_conv_gradients(std::mt19937_64& rng, std::size_t cases,
                                            double step = 1e-5, double tol = 1e-4) {
  GradCheckReport r{"conv2d", 0, 0.0, tol};
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t n = detail::pick(rng, 1, 2), c = detail::pick(rng, 1, 3),
                      o = detail::pick(rng, 1, 3), h = detail::pick(rng, 1, 6),
                      w = detail::pick(rng, 1, 6), k = i % 3 == 0 ? 1 : 3;
    Tensor x = random_tensor({n, c, h, w}, rng);
    ConvKernel kern{random_tensor({o, c, k, k}, rng), random_tensor({o}, rng)};
    const Tensor proj = random_tensor({n, o, h, w}, rng);
    auto loss = [&] { return dot(conv2d_forward(x, kern), proj); };
    const auto g = conv2d_backward(x, kern, proj);
    r.max_rel_error = std::max({r.max_rel_error, relative_error(g.input, numeric_gradient(loss, x, step)),
                                relative_error(g.weights, numeric_gradient(loss, kern.weights, step)),
                                relative_error(g.bias, numeric_gradient(loss, kern.bias, step))});
    ++r.cases;
  }
  return r;
}

inline GradCheckReport check_relu_gradients(std::mt19937_64& rng, std::size_t cases,
                                            double step = 1e-5, double tol = 1e-4) {
  GradCheckReport r{"relu", 0, 0.0, tol};
  for (std::size_t i = 0; i < cases; ++i) {
    Tensor x = random_tensor({detail::pick(rng, 1, 3), detail::pick(rng, 1, 3), detail::pick(rng, 1, 6),
                              detail::pick(rng, 1, 6)},
                             rng);
    detail::avoid_kink(x, 1e-3);
    const Tensor proj = random_tensor(x.dims(), rng);
    auto loss = [&] { return dot(relu(x), proj); };
    r.max_rel_error = std::max(r.max_rel_error,
                               relative_error(relu_backward(x, proj), numeric_gradient(loss, x, step)));
    ++r.cases;
  }
  return r;
}

inline GradCheckReport check_maxpool_gradients(std::mt19937_64& rng, std::size_t cases,
                                               double step = 1e-5, double tol = 1e-4) {
  GradCheckReport r{"maxpool2x2", 0, 0.0, tol};
  while (r.cases < cases) {
    Tensor x = random_tensor({detail::pick(rng, 1, 2), detail::pick(rng, 1, 3), 2 * detail::pick(rng, 1, 4),
                              2 * detail::pick(rng, 1, 4)},
                             rng);
    if (!detail::pool_windows_separated(x, 1e-3)) continue;
    auto [y, idx] = maxpool2x2_forward(x);
    const Tensor proj = random_tensor(y.dims(), rng);
    auto loss = [&] { return dot(maxpool2x2_forward(x).first, proj); };
    r.max_rel_error = std::max(r.max_rel_error, relative_error(maxpool2x2_backward(idx, proj),
                                                               numeric_gradient(loss, x, step)));
    ++r.cases;
  }
  return r;
}

inline GradCheckReport check_resize_gradients(std::mt19937_64& rng, std::size_t cases,
                                              double step = 1e-5, double tol = 1e-4) {
  GradCheckReport r{"resize_nearest", 0, 0.0, tol};
  for (std::size_t i = 0; i < cases; ++i) {
    Tensor x = random_tensor({detail::pick(rng, 1, 2), detail::pick(rng, 1, 3), detail::pick(rng, 1, 7),
                              detail::pick(rng, 1, 7)},
                             rng);
    const std::size_t oh = detail::pick(rng, 1, 9), ow = detail::pick(rng, 1, 9);
    const Tensor proj = random_tensor({x.dim(0), x.dim(1), oh, ow}, rng);
    auto loss = [&] { return dot(resize_nearest_forward(x, oh, ow), proj); };
    r.max_rel_error =
        std::max(r.max_rel_error, relative_error(resize_nearest_backward(x.dims(), proj.dims(), proj),
                                                 numeric_gradient(loss, x, step)));
    ++r.cases;
  }
  return r;
}

inline GradCheckReport check_loss_gradients(std::mt19937_64& rng, std::size_t cases,
                                            double step = 1e-5, double tol = 1e-4) {
  GradCheckReport r{"sigmoid_cross_entropy", 0, 0.0, tol};
  for (std::size_t i = 0; i < cases; ++i) {
    Tensor x = random_tensor({detail::pick(rng, 1, 3), 1, detail::pick(rng, 1, 5), detail::pick(rng, 1, 5)},
                             rng, -4.0, 4.0);
    Tensor z(x.dims());
    for (auto& v : z.values()) v = static_cast<double>(rng() & 1U);
    const auto reduction = i % 2 == 0 ? Reduction::all_elements : Reduction::per_sample;
    auto loss = [&] { return loss_and_grad(x, z, reduction).loss.mean_loss; };
    r.max_rel_error = std::max(r.max_rel_error, relative_error(loss_and_grad(x, z, reduction).grad_logits,
                                                               numeric_gradient(loss, x, step)));
    ++r.cases;
  }
  return r;
}

/// Encoder/decoder with two conv/pool stages on a 16x16 input, including a
/// fractional downsample, small enough for a full finite-difference sweep.
inline ModelSpec reduced_spec() {
  using L = LayerSpec;
  ModelSpec spec{1, 16, 16, {}};
  spec.layers = {L::conv(3), L::pool(), L::conv(4), L::pool(), L::up(8),   L::conv(3),
                 L::up(16),  L::conv(3), L::down(13), L::conv(1, Activation::linear), L::output()};
  return spec;
}

/// Whole-network check on reduced_spec(): weights and biases of every
/// kernel against finite differences of the mean loss. Draws whose ReLU
/// inputs or pool maxima sit within `gap` of a kink are redrawn.
inline GradCheckReport check_model_gradients(std::mt19937_64& rng, std::size_t cases,
                                             double step = 1e-5, double tol = 1e-4, double gap = 1e-4) {
  GradCheckReport r{"model(reduced)", 0, 0.0, tol};
  while (r.cases < cases) {
    Model model(reduced_spec(), rng());
    for (auto& k : model.params())
      for (auto& b : k.bias.values()) b = 0.1 * (2.0 * uniform01(rng) - 1.0);
    const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    if (!detail::clear_of_kinks(model, x, gap)) continue;
    Tensor z({2, 1, 13, 13});
    for (auto& v : z.values()) v = static_cast<double>(rng() & 1U);
    auto loss = [&] { return loss_and_grad(model.infer(x), z).loss.mean_loss; };
    const auto lg = loss_and_grad(model.forward(x, Mode::train), z);
    const auto grads = model.backward(lg.grad_logits);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      r.max_rel_error = std::max(
          {r.max_rel_error, relative_error(grads[k].weights, numeric_gradient(loss, model.params()[k].weights, step)),
           relative_error(grads[k].bias, numeric_gradient(loss, model.params()[k].bias, step))});
    }
    ++r.cases;
  }
  return r;
}

/// The full suite: every backward kernel on `cases` random shapes each,
/// plus whole-network checks on the reduced clone.
inline std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed = 2024, std::size_t cases = 20,
                                                       std::size_t model_cases = 3) {
  std::mt19937_64 rng(seed);
  return {check_conv_gradients(rng, cases),    check_relu_gradients(rng, cases),
          check_maxpool_gradients(rng, cases), check_resize_gradients(rng, cases),
          check_loss_gradients(rng, cases),    check_model_gradients(rng, model_cases)};
}

}  // namespace saltseg
