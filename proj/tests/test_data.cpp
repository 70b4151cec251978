#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "m2p/data.hpp"
#include "m2p/errors.hpp"
#include "m2p/rng.hpp"
#include "support.hpp"

using namespace m2p;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("m2p_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

SynthConfig small_synth() {
  SynthConfig c;
  c.width = c.height = 48;
  c.frames = 5;
  c.min_radius = 10;
  c.max_radius = 14;
  return c;
}

}  // namespace

TEST_CASE("gen_synthetic is deterministic per seed") {
  const SynthConfig cfg = small_synth();
  const Clip a = gen_synthetic(cfg, 3), b = gen_synthetic(cfg, 3), c = gen_synthetic(cfg, 4);
  CHECK(a.frames == b.frames);
  CHECK(a.masks == b.masks);
  CHECK(a.tracks == b.tracks);
  CHECK(a.frames != c.frames);
  CHECK(a.num_frames() == 5);
  CHECK(a.masks.size() == 5);
  for (const Image& f : a.frames) {
    CHECK(f.width == 48);
    for (double v : f.rgb) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("gen_synthetic static and translating motion") {
  SynthConfig cfg = small_synth();
  cfg.motion = "static";
  const Clip s = gen_synthetic(cfg, 1);
  for (int f = 1; f < s.num_frames(); ++f) {
    CHECK(s.frames[f] == s.frames[0]);
    CHECK(s.masks[f] == s.masks[0]);
  }
  for (const Track& t : s.tracks->tracks)
    for (const TrackPoint& p : t.points) CHECK(p == t.points[0]);

  cfg.motion = "translate";
  cfg.velocity_x = 2.0;
  cfg.velocity_y = 0.0;
  const Clip m = gen_synthetic(cfg, 1);
  REQUIRE(!m.tracks->tracks.empty());
  for (const Track& t : m.tracks->tracks) {
    for (std::size_t f = 1; f < t.points.size(); ++f) {
      CHECK(t.points[f].x - t.points[f - 1].x == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(t.points[f].y == t.points[f - 1].y);
    }
  }
}

TEST_CASE("gt tracks agree with poses and masks") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    SynthConfig cfg = small_synth();
    cfg.max_objects = 1 + static_cast<int>(rng.below(3));
    const Clip c = gen_synthetic(cfg, 500 + i);
    REQUIRE(c.tracks.has_value());
    CHECK(c.num_objects() >= 1);
    for (const Track& t : c.tracks->tracks) {
      // Composing the stored transforms reproduces every frame from frame 0.
      const auto t0 = c.poses[0][t.object].transform();
      const Point2 body0{t.points[0].x - t0.t.x, t.points[0].y - t0.t.y};
      const Point2 canon = (1.0 / t0.s) * (t0.r.transposed() * body0);
      for (int f = 0; f < c.num_frames(); ++f) {
        const Point2 p = apply_transform(c.poses[f][t.object].transform(), canon);
        CHECK(std::abs(p.x - t.points[f].x) < 1e-9);
        CHECK(std::abs(p.y - t.points[f].y) < 1e-9);
        const TrackPoint& tp = t.points[f];
        if (!tp.visible) continue;
        // Within one pixel of the mask.
        bool near = false;
        for (int dy = -1; dy <= 1 && !near; ++dy)
          for (int dx = -1; dx <= 1 && !near; ++dx) {
            const int x = static_cast<int>(std::lround(tp.x)) + dx, y = static_cast<int>(std::lround(tp.y)) + dy;
            near = x >= 0 && y >= 0 && x < c.width && y < c.height && c.masks[f][t.object].at(x, y);
          }
        CHECK(near);
      }
    }
  }
}

TEST_CASE("synth config validation") {
  SynthConfig c;
  c.max_objects = 4;
  CHECK_THROWS_AS(c.validate(), BadConfig);
  c = SynthConfig{};
  c.motion = "spin";
  CHECK_THROWS_AS(gen_synthetic(c, 0), BadConfig);
  c = SynthConfig{};
  c.frames = 0;
  CHECK_THROWS_AS(c.validate(), BadConfig);
  CHECK_NOTHROW(SynthConfig{}.validate());
}

TEST_CASE("mask_to_grid coverage rule") {
  CHECK(mask_to_grid(Mask(8, 8, 1), 4) == Mask(2, 2, 1));
  Mask half(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) half.set(x, y, true);
  CHECK(mask_to_grid(half, 4).at(0, 0));
  Mask less = half;
  less.set(0, 0, false);
  CHECK(!mask_to_grid(less, 4).at(0, 0));
  CHECK_THROWS_AS(mask_to_grid(Mask(6, 8), 4), BadDims);

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int f = 1 + static_cast<int>(rng.below(4));
    const int gw = 1 + static_cast<int>(rng.below(8)), gh = 1 + static_cast<int>(rng.below(8));
    const Mask m = test::random_mask(rng, gw * f, gh * f, rng.uniform(0.1, 0.9));
    const Mask g = mask_to_grid(m, f);
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        int n = 0;
        for (int py = y * f; py < (y + 1) * f; ++py)
          for (int px = x * f; px < (x + 1) * f; ++px) n += m.at(px, py);
        CHECK(g.at(x, y) == (n * 2 >= f * f));
      }
  }
}

TEST_CASE("grid and image coordinates") {
  CHECK(grid_to_image({0, 0}, 4) == Point2{1.5, 1.5});
  CHECK(grid_to_image({2, 1}, 4) == Point2{9.5, 5.5});
  CHECK(image_to_grid({1.5, 1.5}, 4) == Point2{0, 0});
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Point2 g{rng.uniform(0, 24), rng.uniform(0, 24)};
    const Point2 back = image_to_grid(grid_to_image(g, 4), 4);
    CHECK(std::abs(back.x - g.x) < 1e-12);
    CHECK(std::abs(back.y - g.y) < 1e-12);
  }
}

TEST_CASE("netpbm round trips") {
  const fs::path dir = scratch("pnm");
  Rng rng(4);
  const Mask m = test::random_mask(rng, 13, 7, 0.5);
  write_pgm(dir / "m.pgm", m);
  CHECK(read_pgm(dir / "m.pgm") == m);

  Image img(9, 5);
  for (double& v : img.rgb) v = rng.uniform();
  write_ppm(dir / "f.ppm", img);
  const Image back = read_ppm(dir / "f.ppm");
  REQUIRE(back.rgb.size() == img.rgb.size());
  double worst = 0;
  for (std::size_t i = 0; i < img.rgb.size(); ++i) worst = std::max(worst, std::abs(back.rgb[i] - img.rgb[i]));
  CHECK(worst <= 1.0 / 510.0 + 1e-15);

  // Header layout is byte-exact.
  std::ifstream in(dir / "m.pgm", std::ios::binary);
  std::string head(10, '\0');
  in.read(head.data(), 10);
  CHECK(head == "P5\n13 7\n25");

  write_text(dir / "bad.pgm", "P6\n2 2\n255\n1234");
  CHECK_THROWS_AS(read_pgm(dir / "bad.pgm"), ParseError);
  write_text(dir / "short.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), ParseError);
  write_text(dir / "max.ppm", "P6\n1 1\n65535\nabcdef");
  CHECK_THROWS_AS(read_ppm(dir / "max.ppm"), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("tracks csv round trip and errors") {
  const fs::path dir = scratch("csv");
  const Clip c = gen_synthetic(small_synth(), 9);
  write_tracks_csv(dir / "t.csv", *c.tracks);
  // The CSV has no owner column; clip.json carries it.
  TrackSet expect = *c.tracks;
  for (Track& t : expect.tracks) t.object = -1;
  CHECK(read_tracks_csv(dir / "t.csv") == expect);

  write_text(dir / "missing.csv", "track_id,frame,x,y\n0,0,1,1\n");
  try {
    read_tracks_csv(dir / "missing.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("visible") != std::string::npos);
  }
  write_text(dir / "junk.csv", "track_id,frame,x,y,visible\n0,0,1,1,1\n0,1,abc,1,1\n");
  try {
    read_tracks_csv(dir / "junk.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == std::string("track_id,frame,x,y,visible\n0,0,1,1,1\n").size());
  }
  fs::remove_all(dir);
}

TEST_CASE("clip directory round trip") {
  const fs::path root = scratch("clips");
  const Clip c = gen_synthetic(small_synth(), 11);
  write_clip(root / "clip_0001", c);
  write_clip(root / "clip_0000", gen_synthetic(small_synth(), 12));
  fs::create_directories(root / "other");
  const auto dirs = list_clips(root);
  REQUIRE(dirs.size() == 2);
  CHECK(dirs[0].filename() == "clip_0000");

  const Clip back = read_clip(root / "clip_0001");
  CHECK(back.masks == c.masks);
  CHECK(back.tracks == c.tracks);
  CHECK(back.num_frames() == c.num_frames());
  for (int f = 0; f < c.num_frames(); ++f)
    for (std::size_t i = 0; i < c.frames[f].rgb.size(); ++i)
      CHECK(std::abs(back.frames[f].rgb[i] - c.frames[f].rgb[i]) <= 1.0 / 510.0 + 1e-15);

  // A mask with the wrong size is rejected.
  write_pgm(root / "clip_0001" / "mask_00002_obj00.pgm", Mask(3, 3));
  CHECK_THROWS_AS(read_clip(root / "clip_0001"), DimMismatch);
  fs::remove_all(root);
}
