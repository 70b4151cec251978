#include <cmath>

#include "doctest.h"
#include "m2p/errors.hpp"
#include "m2p/losses.hpp"
#include "m2p/rng.hpp"
#include "support.hpp"

using namespace m2p;

namespace {

QueryGroupSet random_groups(Rng& rng, int ng, int k, double lo, double hi) {
  QueryGroupSet qs;
  for (int g = 0; g < ng; ++g) {
    std::vector<Point2> pts;
    for (int i = 0; i < k; ++i) pts.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
    qs.groups.push_back(pts);
    qs.group_centroids.push_back(pts[0]);
  }
  return qs;
}

GroupPredictions map_groups(const QueryGroupSet& qs, const SimilarityTransform2D& t, Rng& rng,
                            double noise) {
  GroupPredictions p;
  for (const auto& g : qs.groups) {
    p.positions.emplace_back();
    p.scores.emplace_back();
    for (Point2 q : g) {
      const Point2 m = apply_transform(t, q);
      p.positions.back().push_back({m.x + rng.uniform(-noise, noise), m.y + rng.uniform(-noise, noise)});
      p.scores.back().push_back(rng.uniform());
    }
  }
  return p;
}

SimilarityTransform2D make_transform(double s, double theta, Point2 t) {
  SimilarityTransform2D out;
  out.s = s;
  out.r(0, 0) = std::cos(theta);
  out.r(0, 1) = -std::sin(theta);
  out.r(1, 0) = std::sin(theta);
  out.r(1, 1) = std::cos(theta);
  out.t = t;
  return out;
}

}  // namespace

TEST_CASE("select_reliable orders by score with index tie-break") {
  const std::vector<double> s{0.2, 0.9, 0.5, 0.9, 0.1};
  CHECK(select_reliable(s, 3) == std::vector<std::size_t>{1, 3, 2});
  CHECK(select_reliable(s, 0).empty());
  CHECK(select_reliable(s, 5).size() == 5);
  CHECK_THROWS_AS(select_reliable(s, 6), GroupTooSmall);
}

TEST_CASE("huber hand values and smoothness at the threshold") {
  CHECK(huber({3, 4}, 1.0) == 4.5);
  CHECK(huber({0.6, 0.8}, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(huber({0, 0}, 1.0) == 0.0);
  CHECK(huber({0.3, 0.4}, 1.0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(huber({6, 8}, 2.0) == 18.0);

  // Value and one-sided derivatives agree at r = delta.
  for (double delta : {0.5, 1.0, 3.0}) {
    const Point2 dir{0.6, 0.8};
    const double below = huber((delta * (1 - 1e-12)) * dir, delta);
    const double above = huber((delta * (1 + 1e-12)) * dir, delta);
    CHECK(std::abs(above - below) < 1e-9);
    const Point2 gb = huber_grad((delta * (1 - 1e-12)) * dir, delta);
    const Point2 ga = huber_grad((delta * (1 + 1e-12)) * dir, delta);
    CHECK(std::abs(ga.x - gb.x) < 1e-9);
    CHECK(std::abs(ga.y - gb.y) < 1e-9);
  }

  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Point2 r{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const double delta = rng.uniform(0.2, 2.0);
    if (std::abs(norm(r) - delta) < 1e-3) continue;
    const Point2 g = huber_grad(r, delta);
    const double h = 1e-6;
    CHECK(test::central_diff([&](double v) { return huber({v, r.y}, delta); }, r.x, h) ==
          doctest::Approx(g.x).epsilon(1e-6));
    CHECK(test::central_diff([&](double v) { return huber({r.x, v}, delta); }, r.y, h) ==
          doctest::Approx(g.y).epsilon(1e-6));
  }
}

TEST_CASE("lsc vanishes on exact similarity motion") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const QueryGroupSet qs = random_groups(rng, 4, 8, 5.0, 15.0);
    const auto t = make_transform(rng.uniform(0.8, 1.2), rng.uniform(-0.5, 0.5),
                                  {rng.uniform(8, 12), rng.uniform(8, 12)});
    const GroupPredictions p = map_groups(qs, t, rng, 0.0);
    LscOptions opt;
    opt.grid_width = opt.grid_height = 40;
    const LscResult r = lsc_loss(qs, p, p, opt);
    CHECK(r.loss < 1e-20);
    CHECK(r.supervised == 4 * (8 - 3));
    CHECK(r.skipped_groups == 0);
    for (std::size_t g = 0; g < 4; ++g) {
      int marked = 0;
      for (std::size_t i = 0; i < 8; ++i) {
        if (!r.is_supervised[g][i]) continue;
        ++marked;
        CHECK(norm(r.targets[g][i] - p.positions[g][i]) < 1e-9);
      }
      CHECK(marked == 5);
    }
  }
}

TEST_CASE("lsc skipping, grid exclusion and empty input") {
  Rng rng(3);
  QueryGroupSet qs = random_groups(rng, 3, 6, 2.0, 8.0);
  qs.groups[1].resize(3);  // exactly k_e points: nothing left to supervise
  const GroupPredictions p = map_groups(qs, make_transform(1, 0, {0.5, 0}), rng, 0.3);
  LscOptions opt;
  opt.grid_width = opt.grid_height = 12;
  const LscResult r = lsc_loss(qs, p, p, opt);
  CHECK(r.skipped_groups == 1);
  CHECK(r.supervised == 6);

  // A shift that pushes every target off the grid leaves nothing supervised.
  const GroupPredictions far = map_groups(qs, make_transform(1, 0, {40, 0}), rng, 0.0);
  const LscResult off = lsc_loss(qs, far, far, opt);
  CHECK(off.supervised == 0);
  CHECK(off.out_of_grid == 6);
  CHECK(off.loss == 0.0);

  QueryGroupSet tiny;
  tiny.groups = {{{1, 1}, {2, 2}}};
  tiny.group_centroids = {{1.5, 1.5}};
  GroupPredictions tp{{{{1, 1}, {2, 2}}}, {{0.5, 0.4}}};
  CHECK_THROWS_AS(lsc_loss(tiny, tp, tp, opt), NoValidGroup);

  // Coincident reliable points make the fit degenerate; the group is skipped.
  QueryGroupSet same;
  same.groups = {{{3, 3}, {3, 3}, {3, 3}, {4, 4}}, {{1, 1}, {5, 2}, {2, 6}, {4, 4}}};
  same.group_centroids = {{3, 3}, {3, 3}};
  GroupPredictions sp{{{{3, 3}, {3, 3}, {3, 3}, {4, 4}}, {{1, 1}, {5, 2}, {2, 6}, {4, 4}}},
                      {{0.9, 0.8, 0.7, 0.1}, {0.9, 0.8, 0.7, 0.1}}};
  const LscResult sr = lsc_loss(same, sp, sp, opt);
  CHECK(sr.skipped_groups == 1);
  CHECK(sr.supervised == 1);
}

TEST_CASE("lsc gradients match finite differences, detached and attached") {
  Rng rng(4);
  for (bool detach : {true, false}) {
    for (int trial = 0; trial < 30; ++trial) {
      const QueryGroupSet qs = random_groups(rng, 3, 7, 4.0, 12.0);
      GroupPredictions p = map_groups(qs, make_transform(rng.uniform(0.9, 1.1), rng.uniform(-0.3, 0.3), {1, -1}),
                                      rng, 1.5);
      LscOptions opt;
      opt.detach_targets = detach;
      opt.grid_width = opt.grid_height = 40;
      const LscResult r = lsc_loss(qs, p, p, opt);
      // Detached targets: targets are frozen at their current values.
      const GroupPredictions frozen = p;
      auto f = [&]() { return lsc_loss(qs, p, detach ? frozen : p, opt).loss; };
      const double h = 1e-6;
      for (std::size_t g = 0; g < 3; ++g) {
        for (std::size_t i = 0; i < 7; ++i) {
          for (int axis = 0; axis < 2; ++axis) {
            double& v = axis == 0 ? p.positions[g][i].x : p.positions[g][i].y;
            const double keep = v;
            v = keep + h;
            const double a = f();
            v = keep - h;
            const double b = f();
            v = keep;
            const double an = axis == 0 ? r.dpos[g][i].x : r.dpos[g][i].y;
            CHECK(std::abs((a - b) / (2 * h) - an) < 1e-6);
          }
        }
      }
    }
  }
}

TEST_CASE("lsc detached gradient ignores the proposal branch") {
  Rng rng(5);
  const QueryGroupSet qs = random_groups(rng, 2, 6, 4.0, 12.0);
  const GroupPredictions p = map_groups(qs, make_transform(1.0, 0.2, {0.5, 0.5}), rng, 1.0);
  GroupPredictions prop = p;
  LscOptions opt;
  opt.grid_width = opt.grid_height = 40;
  const LscResult base = lsc_loss(qs, p, prop, opt);
  // Nudging the reliable proposals moves the targets, so the gradient
  // changes only through the residual, and matches the explicit formula.
  for (auto& g : prop.positions)
    for (auto& q : g) q = q + Point2{1e-3, -2e-3};
  const LscResult moved = lsc_loss(qs, p, prop, opt);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t i = 0; i < 6; ++i) {
      if (!moved.is_supervised[g][i]) {
        CHECK(moved.dpos[g][i] == Point2{});
        continue;
      }
      const Point2 expect = (1.0 / moved.supervised) * huber_grad(p.positions[g][i] - moved.targets[g][i], 1.0);
      CHECK(norm(moved.dpos[g][i] - expect) < 1e-15);
      CHECK(norm(moved.targets[g][i] - base.targets[g][i] - Point2{1e-3, -2e-3}) < 1e-9);
    }
  }
}

TEST_CASE("mlc hand values and gradient") {
  const std::vector<double> one{0.4};
  const MlcResult r = mlc_loss_from_mass(one, 0.5, 1e-8);
  CHECK(r.loss == doctest::Approx(-std::log(0.4 + 1e-8)).epsilon(1e-14));
  CHECK(std::abs(r.loss - 0.916290) < 1e-6);
  CHECK(r.active == 1);
  CHECK(mlc_loss_from_mass(std::vector<double>{0.0}, 0.5, 1e-8).loss ==
        doctest::Approx(18.420680743952367).epsilon(1e-12));
  const MlcResult sat = mlc_loss_from_mass(std::vector<double>{1.0, 0.6, 0.51}, 0.5, 1e-8);
  CHECK(sat.loss == 0.0);
  CHECK(sat.active == 0);
  // S exactly at tau is still penalised.
  CHECK(mlc_loss_from_mass(std::vector<double>{0.5}, 0.5, 1e-8).active == 1);

  // Mean over all points, active or not.
  const MlcResult mix = mlc_loss_from_mass(std::vector<double>{0.4, 0.9, 0.9, 0.9}, 0.5, 1e-8);
  CHECK(mix.loss == doctest::Approx(-std::log(0.4 + 1e-8) / 4).epsilon(1e-12));

  Rng rng(6);
  std::vector<double> mass(10);
  for (double& m : mass) m = rng.uniform(0.01, 0.99);
  const MlcResult g = mlc_loss_from_mass(mass, 0.5, 1e-8);
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (std::abs(mass[i] - 0.5) < 1e-3) continue;
    const double num = test::central_diff(
        [&](double v) {
          auto m = mass;
          m[i] = v;
          return mlc_loss_from_mass(m, 0.5, 1e-8).loss;
        },
        mass[i], 1e-7);
    CHECK(num == doctest::Approx(g.dmass[i]).epsilon(1e-6));
  }

  ScalarMap inside(2, 2, 0.0), outside(2, 2, 0.0);
  inside.at(0, 0) = 1.0;
  outside.at(1, 1) = 1.0;
  Mask m(2, 2);
  m.set(0, 0, true);
  const ScalarMap* maps[] = {&inside, &outside};
  const MlcResult from_maps = mlc_loss(maps, m, 0.5, 1e-8);
  CHECK(from_maps.mass == std::vector<double>{1.0, 0.0});
  CHECK(from_maps.loss == doctest::Approx(-std::log(1e-8) / 2).epsilon(1e-12));
}

TEST_CASE("mbc hand values") {
  const std::vector<double> a{1, 2}, b{2, 1};
  CHECK(mbc_group_term(a, b, 1e-6) == doctest::Approx(1.0 / 3.0).epsilon(1e-5));

  // Brute-force evaluation of the weighted mean for a 3-point example.
  const std::vector<double> d0{0.0, 1.0, 3.0}, dt{1.0, 1.0, 2.0};
  const double n0[] = {0.0, 0.25, 0.75}, nt[] = {0.25, 0.25, 0.5};
  double num = 0, den = 0;
  for (int i = 0; i < 3; ++i) {
    num += std::exp(-d0[i]) * std::abs(n0[i] - nt[i]);
    den += std::exp(-d0[i]);
  }
  CHECK(mbc_group_term(d0, dt, 0.0) == doctest::Approx(num / den).epsilon(1e-14));

  // Proportional profiles and single points.
  CHECK(mbc_group_term(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}, 0.0) == doctest::Approx(0.0));
  CHECK(mbc_group_term(std::vector<double>{4}, std::vector<double>{1}, 1e-6) < 1e-5);
}

TEST_CASE("mbc loss, clamping and gradients") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Mask m0 = test::blob_mask(rng, 16, 16, 2);
    const Mask mt = test::blob_mask(rng, 16, 16, 2);
    const DistanceField f0 = distance_field(m0), ft = distance_field(mt);
    QueryGroupSet qs;
    std::vector<std::vector<Point2>> pred;
    for (int g = 0; g < 3; ++g) {
      qs.groups.emplace_back();
      pred.emplace_back();
      for (int i = 0; i < 5; ++i) {
        qs.groups.back().push_back({double(rng.below(16)), double(rng.below(16))});
        pred.back().push_back({std::floor(rng.uniform(0, 15)) + rng.uniform(0.1, 0.9),
                               std::floor(rng.uniform(0, 15)) + rng.uniform(0.1, 0.9)});
      }
      qs.group_centroids.push_back(qs.groups.back()[0]);
    }
    const MbcResult r = mbc_loss(qs, f0, pred, ft, 1e-6);
    CHECK(r.loss >= 0.0);
    const double h = 1e-6;
    for (std::size_t g = 0; g < 3; ++g) {
      for (std::size_t i = 0; i < 5; ++i) {
        for (int axis = 0; axis < 2; ++axis) {
          double& v = axis == 0 ? pred[g][i].x : pred[g][i].y;
          const double keep = v;
          v = keep + h;
          const double a = mbc_loss(qs, f0, pred, ft, 1e-6).loss;
          v = keep - h;
          const double b = mbc_loss(qs, f0, pred, ft, 1e-6).loss;
          v = keep;
          const double an = axis == 0 ? r.dpos[g][i].x : r.dpos[g][i].y;
          // The absolute value has kinks; skip the rare point sitting on one.
          const double num = (a - b) / (2 * h);
          if (std::abs(num - an) > 1e-5) {
            const double c = mbc_loss(qs, f0, pred, ft, 1e-6).loss;
            CHECK(std::abs((a - c) / h - (c - b) / h) > 1e-3);
          }
        }
      }
    }

    // Same points in both frames: zero loss.
    const MbcResult self = mbc_loss(qs, f0, qs.groups, f0, 1e-6);
    CHECK(self.loss < 1e-5);
  }

  Mask m(8, 8);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) m.set(x, y, true);
  const DistanceField f = distance_field(m);
  QueryGroupSet qs;
  qs.groups = {{{0, 0}, {3, 3}}};
  qs.group_centroids = {{1.5, 1.5}};
  const std::vector<std::vector<Point2>> outside{{{-3.0, 0.5}, {3.0, 9.5}}};
  const MbcResult r = mbc_loss(qs, f, outside, f, 1e-6);
  CHECK(r.dpos[0][0].x == 0.0);
  CHECK(r.dpos[0][1].y == 0.0);
  const std::vector<std::vector<Point2>> clamped{{{0.0, 0.5}, {3.0, 7.0}}};
  CHECK(r.loss == mbc_loss(qs, f, clamped, f, 1e-6).loss);
}

TEST_CASE("total_loss composition") {
  CHECK(total_loss(0, 0, 0).l_total == 0.0);
  CHECK(total_loss(1, 1, 1).l_total == doctest::Approx(10.52).epsilon(1e-14));
  const LossBreakdown b = total_loss(4.5, 0.9163, 0.3333);
  CHECK(std::abs(b.l_total - 3.88115) < 1e-4);
  CHECK(b.l_lsc == 4.5);
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::array<double, 3> lam{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 20)};
    const double a = rng.uniform(0, 5), b2 = rng.uniform(0, 5), c = rng.uniform(0, 5), d = rng.uniform(0, 5);
    const double base = total_loss(a, b2, c, lam).l_total;
    CHECK(total_loss(a + d, b2, c, lam).l_total - base == doctest::Approx(lam[0] * d).epsilon(1e-9));
    CHECK(total_loss(a, b2 + d, c, lam).l_total - base == doctest::Approx(lam[1] * d).epsilon(1e-9));
    CHECK(total_loss(a, b2, c + d, lam).l_total - base == doctest::Approx(lam[2] * d).epsilon(1e-9));
  }
}
