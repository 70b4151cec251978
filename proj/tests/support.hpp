#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "m2p/geometry.hpp"
#include "m2p/maskops.hpp"
#include "m2p/rng.hpp"

namespace m2p::test {

inline Mask random_mask(Rng& rng, int w, int h, double density) {
  Mask m(w, h);
  for (auto& b : m.bits) b = rng.uniform() < density ? 1 : 0;
  if (m.count() == 0) m.bits[rng.below(m.bits.size())] = 1;
  return m;
}

/// Union of random discs, a smoother shape than independent noise.
inline Mask blob_mask(Rng& rng, int w, int h, int discs) {
  Mask m(w, h);
  for (int d = 0; d < discs; ++d) {
    const double cx = rng.uniform(0, w - 1), cy = rng.uniform(0, h - 1);
    const double r = rng.uniform(1.0, 0.35 * std::min(w, h));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
  }
  if (m.count() == 0) m.set(w / 2, h / 2, true);
  return m;
}

/// Central difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace m2p::test
