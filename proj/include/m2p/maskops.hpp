#pragma once

#include <cstdint>
#include <vector>

#include "m2p/geometry.hpp"

namespace m2p {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(Cell a, Cell b) = default;
};

/// Binary foreground map, row-major, 1 = foreground.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::size_t count() const;
  /// Foreground cells in row-major order.
  std::vector<Cell> foreground() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Per-cell Euclidean distance (in cells) to the nearest boundary pixel.
struct DistanceField {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Foreground pixels with a background 4-neighbour or lying on the image
/// border, in row-major order. Throws EmptyMask.
std::vector<Cell> boundary_pixels(const Mask& m);

/// Exact Euclidean distance transform to the boundary pixel set, evaluated
/// at every cell (separable lower-envelope method). Throws EmptyMask.
DistanceField distance_field(const Mask& m);

struct DistanceSample {
  double value = 0.0;
  Point2 grad;  // d value / d (x, y)
};

/// Bilinear interpolation of the field at p plus its spatial gradient.
/// Throws OutOfBounds when p lies outside [0, width-1] x [0, height-1].
DistanceSample sample_distance(const DistanceField& f, Point2 p);

}  // namespace m2p
