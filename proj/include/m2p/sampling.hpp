#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "m2p/geometry.hpp"
#include "m2p/maskops.hpp"

namespace m2p {

struct Partition {
  std::vector<std::vector<Cell>> groups;
  std::vector<Point2> centroids;
  /// Within-cluster sum of squared distances after each assignment step.
  std::vector<double> sse_history;
};

/// Lloyd's k-means on cell coordinates with farthest-candidate seeding.
/// The effective group count is min(g, |pixels|).
Partition kmeans_partition(std::span<const Cell> pixels, int g, std::uint64_t seed);

/// Farthest point sampling. Starts from the candidate nearest the centroid;
/// ties go to the lowest candidate index. Returns min(k, |candidates|) points.
std::vector<Point2> fps_select(std::span<const Point2> candidates, int k);

struct QueryGroupSet {
  std::vector<std::vector<Point2>> groups;
  std::vector<Point2> group_centroids;

  std::size_t total_points() const;
};

/// K-means partition of the mask's foreground followed by FPS per group.
/// Throws EmptyMask.
QueryGroupSet sample_queries(const Mask& m, int g, int k, std::uint64_t seed);

}  // namespace m2p
