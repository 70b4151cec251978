#include "m2p/sampling.hpp"

#include <algorithm>
#include <limits>

#include "m2p/errors.hpp"
#include "m2p/rng.hpp"

namespace m2p {

namespace {

double sq_dist(Point2 a, Point2 b) {
  const Point2 d = a - b;
  return dot(d, d);
}

Point2 to_point(Cell c) { return {static_cast<double>(c.x), static_cast<double>(c.y)}; }

}  // namespace

Partition kmeans_partition(std::span<const Cell> pixels, int g, std::uint64_t seed) {
  Partition out;
  const std::size_t n = pixels.size();
  if (n == 0) return out;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(g, 1)), n);

  std::vector<Point2> pts(n);
  std::transform(pixels.begin(), pixels.end(), pts.begin(), to_point);

  // Seeding: one random pixel, then repeatedly the pixel farthest from all
  // chosen centres.
  Rng rng(seed);
  std::vector<Point2> centers;
  centers.reserve(k);
  centers.push_back(pts[rng.below(n)]);
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = sq_dist(pts[i], centers[0]);
  while (centers.size() < k) {
    const auto far = std::max_element(nearest.begin(), nearest.end()) - nearest.begin();
    centers.push_back(pts[far]);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(pts[i], centers.back()));
  }

  std::vector<std::size_t> assign(n, k);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(pts[i], centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(pts[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }

    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t a : assign) ++sizes[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] != 0) continue;
      // Re-seed an empty cluster with the pixel farthest from its centre.
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[assign[i]] < 2) continue;
        const double d = sq_dist(pts[i], centers[assign[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) break;
      --sizes[assign[far]];
      assign[far] = c;
      sizes[c] = 1;
      centers[c] = pts[far];
      changed = true;
    }

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += sq_dist(pts[i], centers[assign[i]]);
    out.sse_history.push_back(sse);

    if (!changed && iter > 0) break;

    std::vector<Point2> sums(k);
    for (std::size_t i = 0; i < n; ++i) sums[assign[i]] = sums[assign[i]] + pts[i];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) centers[c] = (1.0 / static_cast<double>(sizes[c])) * sums[c];
    }
  }

  out.groups.assign(k, {});
  for (std::size_t i = 0; i < n; ++i) out.groups[assign[i]].push_back(pixels[i]);
  out.centroids = centers;
  // Drop clusters that stayed empty (only possible with duplicate pixels).
  for (std::size_t c = k; c-- > 0;) {
    if (out.groups[c].empty()) {
      out.groups.erase(out.groups.begin() + static_cast<std::ptrdiff_t>(c));
      out.centroids.erase(out.centroids.begin() + static_cast<std::ptrdiff_t>(c));
    }
  }
  return out;
}

std::vector<Point2> fps_select(std::span<const Point2> candidates, int k) {
  std::vector<Point2> out;
  const std::size_t n = candidates.size();
  if (n == 0 || k <= 0) return out;
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(k), n);

  Point2 centroid;
  for (const Point2& p : candidates) centroid = centroid + p;
  centroid = (1.0 / static_cast<double>(n)) * centroid;

  std::size_t first = 0;
  double first_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sq_dist(candidates[i], centroid);
    if (d < first_d) {
      first_d = d;
      first = i;
    }
  }

  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::size_t next = first;
  while (out.size() < want) {
    taken[next] = true;
    out.push_back(candidates[next]);
    double best = -1.0;
    std::size_t best_i = n;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], sq_dist(candidates[i], candidates[next]));
      if (!taken[i] && min_d[i] > best) {
        best = min_d[i];
        best_i = i;
      }
    }
    if (best_i == n) break;
    next = best_i;
  }
  return out;
}

std::size_t QueryGroupSet::total_points() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

QueryGroupSet sample_queries(const Mask& m, int g, int k, std::uint64_t seed) {
  const std::vector<Cell> fg = m.foreground();
  if (fg.empty()) throw EmptyMask();
  const Partition part = kmeans_partition(fg, g, seed);
  QueryGroupSet out;
  for (std::size_t i = 0; i < part.groups.size(); ++i) {
    std::vector<Point2> cands(part.groups[i].size());
    std::transform(part.groups[i].begin(), part.groups[i].end(), cands.begin(), to_point);
    out.groups.push_back(fps_select(cands, k));
    out.group_centroids.push_back(part.centroids[i]);
  }
  return out;
}

}  // namespace m2p
