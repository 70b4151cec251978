#include <algorithm>
#include <limits>
#include <set>

#include "doctest.h"
#include "m2p/errors.hpp"
#include "m2p/sampling.hpp"
#include "support.hpp"

using namespace m2p;

namespace {

double sse_of(const std::vector<std::vector<Cell>>& groups) {
  double total = 0.0;
  for (const auto& g : groups) {
    double mx = 0, my = 0;
    for (Cell c : g) {
      mx += c.x;
      my += c.y;
    }
    mx /= g.size();
    my /= g.size();
    for (Cell c : g) total += (c.x - mx) * (c.x - mx) + (c.y - my) * (c.y - my);
  }
  return total;
}

double min_pairwise(const std::vector<Point2>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, norm(pts[i] - pts[j]));
  return best;
}

std::set<std::pair<int, int>> as_set(const std::vector<Cell>& cells) {
  std::set<std::pair<int, int>> s;
  for (Cell c : cells) s.insert({c.x, c.y});
  return s;
}

}  // namespace

TEST_CASE("kmeans_partition trivial group counts") {
  std::vector<Cell> px;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) px.push_back({x, y});
  const Partition one = kmeans_partition(px, 1, 3);
  REQUIRE(one.groups.size() == 1);
  CHECK(one.groups[0].size() == px.size());

  const std::vector<Cell> five{{0, 0}, {3, 1}, {7, 2}, {1, 5}, {6, 6}};
  const Partition p = kmeans_partition(five, 12, 3);
  REQUIRE(p.groups.size() == 5);
  for (const auto& g : p.groups) CHECK(g.size() == 1);
}

TEST_CASE("kmeans_partition separates two blobs like the exhaustive optimum") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Cell> px;
    const int ox = static_cast<int>(rng.below(3)), oy = static_cast<int>(rng.below(3));
    const int gap = 6 + static_cast<int>(rng.below(6));
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        px.push_back({ox + x, oy + y});
        px.push_back({ox + gap + x, oy + y + static_cast<int>(trial % 3)});
      }
    const Partition p = kmeans_partition(px, 2, rng.next_u64());
    REQUIRE(p.groups.size() == 2);

    // Exhaustive search over all 2-partitions of the 18 cells.
    const std::size_t n = px.size();
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_mask = 0;
    for (std::uint32_t m = 1; m < (1u << (n - 1)); ++m) {
      std::vector<std::vector<Cell>> g(2);
      for (std::size_t i = 0; i < n; ++i) g[(m >> i) & 1u].push_back(px[i]);
      const double s = sse_of(g);
      if (s < best) {
        best = s;
        best_mask = m;
      }
    }
    std::vector<Cell> a, b;
    for (std::size_t i = 0; i < n; ++i) ((best_mask >> i) & 1u ? a : b).push_back(px[i]);
    const auto got0 = as_set(p.groups[0]);
    CHECK((got0 == as_set(a) || got0 == as_set(b)));
    CHECK(sse_of(p.groups) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("kmeans objective never increases and partition is deterministic") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Mask m = test::blob_mask(rng, 24, 24, 1 + static_cast<int>(rng.below(4)));
    const auto fg = m.foreground();
    const std::uint64_t seed = rng.next_u64();
    const Partition p = kmeans_partition(fg, 12, seed);
    for (std::size_t i = 1; i < p.sse_history.size(); ++i) {
      CHECK(p.sse_history[i] <= p.sse_history[i - 1] + 1e-9);
    }
    std::size_t total = 0;
    for (const auto& g : p.groups) {
      CHECK(!g.empty());
      total += g.size();
    }
    CHECK(total == fg.size());
    const Partition q = kmeans_partition(fg, 12, seed);
    CHECK(p.groups == q.groups);
  }
}

TEST_CASE("fps_select hand traces") {
  std::vector<Point2> line;
  for (int x = 0; x <= 10; ++x) line.push_back({double(x), 0.0});
  const auto three = fps_select(line, 3);
  REQUIRE(three.size() == 3);
  CHECK(three[0].x == 5.0);
  CHECK(three[1].x == 0.0);
  CHECK(three[2].x == 10.0);

  const auto one = fps_select(line, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].x == 5.0);

  const auto all = fps_select(line, 11);
  CHECK(all.size() == 11);
  std::set<double> xs;
  for (Point2 p : all) xs.insert(p.x);
  CHECK(xs.size() == 11);
  CHECK(fps_select(line, 50).size() == 11);
}

TEST_CASE("fps spread against random subsets") {
  // Greedy farthest-point selection is a 2-approximation of the max-min
  // dispersion optimum, so no subset can be more than twice as spread out.
  // It is not optimal, so a few random subsets may beat it.
  Rng rng(6);
  int beaten = 0, draws = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point2> cands;
    const Mask m = test::blob_mask(rng, 12, 12, 2);
    for (Cell c : m.foreground()) cands.push_back({double(c.x), double(c.y)});
    const int k = std::min<int>(6, static_cast<int>(cands.size()));
    if (k < 2) continue;
    const double fps = min_pairwise(fps_select(cands, k));
    for (int r = 0; r < 1000; ++r) {
      std::vector<Point2> pool = cands;
      for (int i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
      pool.resize(k);
      const double rnd = min_pairwise(pool);
      CHECK(2.0 * fps >= rnd - 1e-12);
      ++draws;
      if (rnd > fps + 1e-12) ++beaten;
    }
  }
  CHECK(draws > 0);
  CHECK(beaten <= draws / 100);
  MESSAGE("random subsets more spread than FPS: " << beaten << " of " << draws);
}

TEST_CASE("sample_queries counts and membership") {
  const QueryGroupSet full = sample_queries(Mask(24, 24, 1), 12, 12, 1);
  CHECK(full.groups.size() == 12);
  CHECK(full.total_points() == 144);
  std::set<std::pair<double, double>> distinct;
  for (const auto& g : full.groups)
    for (Point2 p : g) distinct.insert({p.x, p.y});
  CHECK(distinct.size() == 144);

  Mask single(10, 10);
  single.set(4, 7, true);
  const QueryGroupSet s = sample_queries(single, 12, 12, 9);
  REQUIRE(s.groups.size() == 1);
  REQUIRE(s.groups[0].size() == 1);
  CHECK(s.groups[0][0] == Point2{4, 7});

  CHECK_THROWS_AS(sample_queries(Mask(5, 5), 3, 3, 0), EmptyMask);

  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask m = trial % 2 ? test::random_mask(rng, 24, 24, rng.uniform(0.05, 0.6))
                             : test::blob_mask(rng, 24, 24, 2);
    const int g = 1 + static_cast<int>(rng.below(14));
    const int k = 1 + static_cast<int>(rng.below(14));
    const std::uint64_t seed = rng.next_u64();
    const QueryGroupSet q = sample_queries(m, g, k, seed);
    CHECK(q.groups.size() <= static_cast<std::size_t>(g));
    CHECK(q.group_centroids.size() == q.groups.size());
    for (const auto& grp : q.groups) {
      CHECK(!grp.empty());
      CHECK(grp.size() <= static_cast<std::size_t>(k));
      std::set<std::pair<double, double>> seen;
      for (Point2 p : grp) {
        CHECK(m.at(static_cast<int>(p.x), static_cast<int>(p.y)));
        seen.insert({p.x, p.y});
      }
      CHECK(seen.size() == grp.size());
    }
    const QueryGroupSet again = sample_queries(m, g, k, seed);
    CHECK(again.groups == q.groups);
  }
}
