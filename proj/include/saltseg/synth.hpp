#pragma once

// Synthetic stand-in for seismic salt data: a layered background with up to
// three bright filled ellipses whose union is the salt mask.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "saltseg/dataset.hpp"
#include "saltseg/model.hpp"

namespace saltseg {

struct SynthEllipse {
  double cx = 0, cy = 0;  // centre, pixel units
  double a = 0, b = 0;    // semi-axes along the rotated x and y directions
  double theta = 0;       // rotation, radians
  double intensity = 0;   // fill level in [0, 1]
};

/// Pixel (x, y) is salt when its centre lies inside or on the ellipse.
inline bool inside(const SynthEllipse& e, double x, double y) {
  const double dx = x - e.cx, dy = y - e.cy;
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double u = (dx * c + dy * s) / e.a;
  const double v = (-dx * s + dy * c) / e.b;
  return u * u + v * v <= 1.0;
}

struct SynthSample {
  Sample sample;
  std::vector<SynthEllipse> ellipses;
};

inline std::string synth_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%05zu", index);
  return buf;
}

/// Fully determined by (seed, index).
inline SynthSample synth_sample(std::uint64_t seed, std::size_t index) {
  auto rng = seeded_engine(seed, index);
  auto range = [&rng](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  constexpr double two_pi = 2.0 * std::numbers::pi;
  constexpr std::size_t n = kNativeSize;

  const double period1 = range(20.0, 50.0), phase1 = range(0.0, two_pi);
  const double period2 = range(6.0, 15.0), phase2 = range(0.0, two_pi);
  const double dip = range(-0.15, 0.15);
  const double base = range(0.25, 0.35);

  SynthSample out;
  const auto count = static_cast<std::size_t>(uniform_below(rng, 4));
  for (std::size_t i = 0; i < count; ++i) {
    SynthEllipse e;
    e.cx = range(10.0, 90.0);
    e.cy = range(10.0, 90.0);
    e.a = range(6.0, 25.0);
    e.b = range(6.0, 25.0);
    e.theta = range(0.0, std::numbers::pi);
    e.intensity = range(0.7, 0.95);
    out.ellipses.push_back(e);
  }

  Tensor image({1, n, n});
  Tensor mask({1, n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double depth = static_cast<double>(y) + dip * static_cast<double>(x);
      const double layers = 0.12 * std::sin(two_pi * depth / period1 + phase1) +
                            0.06 * std::sin(two_pi * depth / period2 + phase2);
      double v = base + layers;
      for (const auto& e : out.ellipses) {
        if (inside(e, static_cast<double>(x), static_cast<double>(y))) {
          v = e.intensity + 0.25 * layers;
          mask[y * n + x] = 1.0;
        }
      }
      // Quantised to 8-bit levels so on-disk copies are exact.
      image[y * n + x] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  out.sample = {std::move(image), std::move(mask), synth_id(index)};
  return out;
}

inline Dataset synth_generate(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("synth_generate: n must be at least 1");
  Dataset ds(Provenance::synthetic);
  for (std::size_t i = 0; i < n; ++i) ds.add(synth_sample(seed, i).sample);
  return ds;
}

}  // namespace saltseg
