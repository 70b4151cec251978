#include "m2p/maskops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "m2p/errors.hpp"

namespace m2p {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

std::vector<Cell> Mask::foreground() const {
  std::vector<Cell> out;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (at(x, y)) out.push_back({x, y});
    }
  }
  return out;
}

std::vector<Cell> boundary_pixels(const Mask& m) {
  std::vector<Cell> out;
  bool any = false;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      any = true;
      const bool on_border = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1;
      if (on_border || !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1)) {
        out.push_back({x, y});
      }
    }
  }
  if (!any) throw EmptyMask();
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas). `f` and `d` have length n; scratch buffers are reused.
void squared_dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                   std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so k stays >= 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace

DistanceField distance_field(const Mask& m) {
  const std::vector<Cell> boundary = boundary_pixels(m);
  const int w = m.width;
  const int h = m.height;
  std::vector<double> grid(static_cast<std::size_t>(w) * h, kInf);
  for (const Cell& c : boundary) grid[static_cast<std::size_t>(c.y) * w + c.x] = 0.0;

  const int n = std::max(w, h);
  std::vector<double> f, d;
  std::vector<int> v(n);
  std::vector<double> z(n + 1);

  f.resize(h);
  d.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
    squared_dt_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int y = 0; y < h; ++y) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(y) * w, w, f.begin());
    squared_dt_1d(f, d, v, z);
    std::copy_n(d.begin(), w, grid.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }

  DistanceField out{w, h, std::move(grid)};
  for (double& x : out.values) x = std::sqrt(x);
  return out;
}

DistanceSample sample_distance(const DistanceField& f, Point2 p) {
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= f.width - 1 && p.y <= f.height - 1)) {
    std::ostringstream msg;
    msg << "sample point (" << p.x << ", " << p.y << ") outside " << f.width << "x" << f.height
        << " field";
    throw OutOfBounds(msg.str());
  }
  const int x0 = std::min(static_cast<int>(std::floor(p.x)), std::max(f.width - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(p.y)), std::max(f.height - 2, 0));
  const int x1 = std::min(x0 + 1, f.width - 1);
  const int y1 = std::min(y0 + 1, f.height - 1);
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  const double v00 = f.at(x0, y0);
  const double v10 = f.at(x1, y0);
  const double v01 = f.at(x0, y1);
  const double v11 = f.at(x1, y1);
  DistanceSample s;
  s.value = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
  s.grad.x = x1 == x0 ? 0.0 : (1 - fy) * (v10 - v00) + fy * (v11 - v01);
  s.grad.y = y1 == y0 ? 0.0 : (1 - fx) * (v01 - v00) + fx * (v11 - v10);
  return s;
}

}  // namespace m2p
