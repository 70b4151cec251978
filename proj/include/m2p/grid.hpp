#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace m2p {

/// Dense H x W x C feature map, channel-fastest.
struct FeatureGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  FeatureGrid() = default;
  FeatureGrid(int h, int w, int c)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, 0.0) {}

  std::size_t offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * width + x) * channels;
  }
  std::span<double> at(int y, int x) { return {values.data() + offset(y, x), static_cast<std::size_t>(channels)}; }
  std::span<const double> at(int y, int x) const {
    return {values.data() + offset(y, x), static_cast<std::size_t>(channels)};
  }
  std::size_t cells() const { return static_cast<std::size_t>(height) * width; }
};

/// Single-channel H x W map (correlation, refined response, probabilities).
struct ScalarMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ScalarMap() = default;
  ScalarMap(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t cells() const { return values.size(); }
};

/// Inclusive cell rectangle; empty when y0 > y1 or x0 > x1.
struct Box {
  int y0 = 0, x0 = 0, y1 = -1, x1 = -1;

  bool empty() const { return y0 > y1 || x0 > x1; }
  Box grown(int r, int h, int w) const {
    if (empty()) return *this;
    return {y0 - r < 0 ? 0 : y0 - r, x0 - r < 0 ? 0 : x0 - r, y1 + r >= h ? h - 1 : y1 + r,
            x1 + r >= w ? w - 1 : x1 + r};
  }
  static Box full(int h, int w) { return {0, 0, h - 1, w - 1}; }
};

}  // namespace m2p
