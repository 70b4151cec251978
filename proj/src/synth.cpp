#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "m2p/data.hpp"
#include "m2p/errors.hpp"
#include "m2p/rng.hpp"

namespace m2p {

SimilarityTransform2D ObjectPose::transform() const {
  return {s, Mat2::rotation(theta), {tx, ty}};
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw BadConfig("synth." + field + ": " + why);
  };
  if (width < 8) fail("width", "must be >= 8");
  if (height < 8) fail("height", "must be >= 8");
  if (frames < 1) fail("frames", "must be >= 1");
  if (min_objects < 1 || min_objects > 3) fail("min_objects", "must be in [1, 3]");
  if (max_objects < min_objects || max_objects > 3) fail("max_objects", "must be in [min_objects, 3]");
  if (motion != "random_walk" && motion != "translate" && motion != "static") {
    fail("motion", "expected random_walk, translate or static");
  }
  if (!(min_scale > 0.0) || max_scale < min_scale) fail("min_scale", "need 0 < min_scale <= max_scale");
  if (max_rotation_deg < 0.0) fail("max_rotation_deg", "must be >= 0");
  if (!(min_radius > 1.0) || max_radius < min_radius) fail("min_radius", "need 1 < min_radius <= max_radius");
  if (deform < 0.0 || deform > 4.0) fail("deform", "must be in [0, 4]");
  if (!(track_spacing > 0.5)) fail("track_spacing", "must be > 0.5");
  if (scale_step < 0.0 || rotation_step_deg < 0.0 || translation_step < 0.0) {
    fail("scale_step", "step sizes must be >= 0");
  }
}

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t key) {
  const std::uint64_t h = mix64(key ^ mix64(static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ULL ^
                                            mix64(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, double wavelength, std::uint64_t key) {
  const double fx = x / wavelength;
  const double fy = y / wavelength;
  const double x0 = std::floor(fx);
  const double y0 = std::floor(fy);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double tx = smooth(fx - x0);
  const double ty = smooth(fy - y0);
  const auto ix = static_cast<std::int64_t>(x0);
  const auto iy = static_cast<std::int64_t>(y0);
  const double v00 = lattice(ix, iy, key);
  const double v10 = lattice(ix + 1, iy, key);
  const double v01 = lattice(ix, iy + 1, key);
  const double v11 = lattice(ix + 1, iy + 1, key);
  return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

/// High-contrast multi-octave colour texture.
struct Texture {
  std::uint64_t key = 0;
  std::array<double, 3> tint{0.5, 0.5, 0.5};

  std::array<double, 3> operator()(Point2 q) const {
    constexpr std::array<double, 3> kWavelength{14.0, 7.0, 3.5};
    constexpr std::array<double, 3> kAmplitude{0.5, 0.3, 0.2};
    std::array<double, 3> rgb{};
    for (int ch = 0; ch < 3; ++ch) {
      double v = 0.0;
      for (int o = 0; o < 3; ++o) {
        v += kAmplitude[o] * value_noise(q.x, q.y, kWavelength[o], key + 31 * ch + o);
      }
      v = 0.5 + 2.4 * (v - 0.5) + (tint[ch] - 0.5) * 0.4;
      rgb[ch] = std::clamp(v, 0.0, 1.0);
    }
    return rgb;
  }
};

struct ObjectSpec {
  bool ellipse = true;
  double ax = 1.0, ay = 1.0;          // ellipse semi-axes
  std::vector<Point2> polygon;        // star-shaped polygon vertices
  Texture texture;
  double deform_phase = 0.0;

  bool inside(Point2 q) const {
    if (ellipse) {
      const double u = q.x / ax;
      const double v = q.y / ay;
      return u * u + v * v <= 1.0;
    }
    bool in = false;
    const std::size_t n = polygon.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point2 a = polygon[i];
      const Point2 b = polygon[j];
      if ((a.y > q.y) != (b.y > q.y) && q.x < (b.x - a.x) * (q.y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
  }
};

Point2 deform_offset(const ObjectSpec& o, double amp, int frame, Point2 q) {
  if (amp == 0.0) return {};
  constexpr double kOmega = 2.0 * std::numbers::pi / 40.0;
  const double ph = o.deform_phase + 0.35 * frame;
  return {amp * std::sin(kOmega * q.y + ph), amp * std::cos(kOmega * q.x + 0.7 * ph)};
}

/// Canonical point seen at body coordinate q = T^-1(pixel) in a given frame.
Point2 warp_to_canonical(const ObjectSpec& o, double amp, int frame, Point2 q) {
  return q + deform_offset(o, amp, frame, q);
}

/// Inverse of warp_to_canonical by fixed-point iteration (contraction for
/// amp * omega < 1).
Point2 canonical_to_body(const ObjectSpec& o, double amp, int frame, Point2 c) {
  if (amp == 0.0) return c;
  Point2 q = c;
  for (int i = 0; i < 100; ++i) q = c - deform_offset(o, amp, frame, q);
  return q;
}

double reflect_into(double v, double lo, double hi, double& vel) {
  if (v < lo) {
    vel = std::abs(vel);
    return std::min(hi, 2 * lo - v);
  }
  if (v > hi) {
    vel = -std::abs(vel);
    return std::max(lo, 2 * hi - v);
  }
  return v;
}

}  // namespace

Clip gen_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng({seed, 0x73796e7468ULL});
  const int w = cfg.width;
  const int h = cfg.height;
  const int nobj = cfg.min_objects + static_cast<int>(rng.below(cfg.max_objects - cfg.min_objects + 1));

  std::vector<ObjectSpec> objects(nobj);
  for (ObjectSpec& o : objects) {
    const double radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    o.ellipse = rng.uniform() < 0.5;
    if (o.ellipse) {
      o.ax = radius * rng.uniform(0.8, 1.0);
      o.ay = radius * rng.uniform(0.6, 1.0);
    } else {
      const int n = 5 + static_cast<int>(rng.below(4));
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int k = 0; k < n; ++k) {
        const double a = phase + 2.0 * std::numbers::pi * k / n;
        const double r = radius * rng.uniform(0.75, 1.05);
        o.polygon.push_back({r * std::cos(a), r * std::sin(a)});
      }
    }
    o.texture.key = rng.next_u64();
    o.texture.tint = {rng.uniform(), rng.uniform(), rng.uniform()};
    o.deform_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  Texture background{rng.next_u64(), {0.5, 0.5, 0.5}};

  // Trajectories.
  const double max_rot = cfg.max_rotation_deg * std::numbers::pi / 180.0;
  const double rot_step = cfg.rotation_step_deg * std::numbers::pi / 180.0;
  const double margin = std::min(w, h) * 0.15;
  std::vector<std::vector<ObjectPose>> poses(cfg.frames, std::vector<ObjectPose>(nobj));
  for (int k = 0; k < nobj; ++k) {
    ObjectPose p;
    p.s = std::clamp(rng.uniform(0.85, 1.15), cfg.min_scale, cfg.max_scale);
    p.theta = std::clamp(rng.uniform(-0.2, 0.2), -max_rot, max_rot);
    p.tx = rng.uniform(margin + 6.0, w - margin - 6.0);
    p.ty = rng.uniform(margin + 6.0, h - margin - 6.0);
    double vs = 0.0, vr = 0.0, vx = 0.0, vy = 0.0;
    if (cfg.motion == "random_walk") {
      vs = rng.uniform(-1, 1) * cfg.scale_step;
      vr = rng.uniform(-1, 1) * rot_step;
      vx = rng.uniform(-1, 1) * cfg.translation_step;
      vy = rng.uniform(-1, 1) * cfg.translation_step;
    }
    poses[0][k] = p;
    for (int f = 1; f < cfg.frames; ++f) {
      if (cfg.motion == "translate") {
        p.tx = poses[0][k].tx + cfg.velocity_x * f;
        p.ty = poses[0][k].ty + cfg.velocity_y * f;
      } else if (cfg.motion == "random_walk") {
        vs = 0.8 * vs + 0.6 * rng.uniform(-1, 1) * cfg.scale_step;
        vr = 0.8 * vr + 0.6 * rng.uniform(-1, 1) * rot_step;
        vx = 0.8 * vx + 0.6 * rng.uniform(-1, 1) * cfg.translation_step;
        vy = 0.8 * vy + 0.6 * rng.uniform(-1, 1) * cfg.translation_step;
        p.s = reflect_into(p.s + vs, cfg.min_scale, cfg.max_scale, vs);
        p.theta = reflect_into(p.theta + vr, -max_rot, max_rot, vr);
        p.tx = reflect_into(p.tx + vx, margin, w - 1 - margin, vx);
        p.ty = reflect_into(p.ty + vy, margin, h - 1 - margin, vy);
      }
      poses[f][k] = p;
    }
  }

  Clip clip;
  clip.width = w;
  clip.height = h;
  clip.seed = seed;
  clip.poses = poses;
  clip.frames.reserve(cfg.frames);
  clip.masks.assign(cfg.frames, std::vector<Mask>(nobj, Mask(w, h)));
  for (int f = 0; f < cfg.frames; ++f) {
    Image img(w, h);
    std::vector<Mat2> inv_r(nobj);
    for (int k = 0; k < nobj; ++k) inv_r[k] = Mat2::rotation(-poses[f][k].theta);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Point2 px{static_cast<double>(x), static_cast<double>(y)};
        int top = -1;
        Point2 top_q;
        for (int k = nobj - 1; k >= 0; --k) {
          const ObjectPose& p = poses[f][k];
          const Point2 body = (1.0 / p.s) * (inv_r[k] * (px - Point2{p.tx, p.ty}));
          const Point2 q = warp_to_canonical(objects[k], cfg.deform, f, body);
          if (objects[k].inside(q)) {
            top = k;
            top_q = q;
            break;
          }
        }
        const auto rgb = top >= 0 ? objects[top].texture(top_q) : background(px);
        for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = rgb[ch];
        if (top >= 0) clip.masks[f][top].set(x, y, true);
      }
    }
    clip.frames.push_back(std::move(img));
  }

  // Ground truth: canonical lattice points well inside each shape.
  TrackSet tracks;
  int next_id = 0;
  for (int k = 0; k < nobj; ++k) {
    const ObjectSpec& o = objects[k];
    const double extent = cfg.max_radius * 1.1;
    for (double cy = -extent; cy <= extent; cy += cfg.track_spacing) {
      for (double cx = -extent; cx <= extent; cx += cfg.track_spacing) {
        const Point2 c{cx, cy};
        if (!o.inside((1.0 / 0.8) * c)) continue;
        Track t;
        t.id = next_id;
        t.object = k;
        bool any_visible = false;
        for (int f = 0; f < cfg.frames; ++f) {
          const Point2 body = canonical_to_body(o, cfg.deform, f, c);
          const Point2 pos = apply_transform(poses[f][k].transform(), body);
          TrackPoint tp{pos.x, pos.y, false};
          const int rx = static_cast<int>(std::lround(pos.x));
          const int ry = static_cast<int>(std::lround(pos.y));
          if (pos.x >= 0.0 && pos.y >= 0.0 && pos.x <= w - 1 && pos.y <= h - 1) {
            tp.visible = clip.masks[f][k].at(rx, ry);
          }
          any_visible = any_visible || tp.visible;
          t.points.push_back(tp);
        }
        if (!any_visible) continue;
        ++next_id;
        tracks.tracks.push_back(std::move(t));
      }
    }
  }
  clip.tracks = std::move(tracks);
  return clip;
}

Mask mask_to_grid(const Mask& m, int factor) {
  if (factor < 1 || m.width % factor != 0 || m.height % factor != 0) {
    throw BadDims("mask " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                  " is not divisible by " + std::to_string(factor));
  }
  Mask out(m.width / factor, m.height / factor);
  const int need = factor * factor;
  for (int gy = 0; gy < out.height; ++gy) {
    for (int gx = 0; gx < out.width; ++gx) {
      int count = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) count += m.at(gx * factor + dx, gy * factor + dy) ? 1 : 0;
      }
      out.set(gx, gy, 2 * count >= need);
    }
  }
  return out;
}

Point2 grid_to_image(Point2 g, int patch) {
  const double off = 0.5 * patch - 0.5;
  return {g.x * patch + off, g.y * patch + off};
}

Point2 image_to_grid(Point2 p, int patch) {
  const double off = 0.5 * patch - 0.5;
  return {(p.x - off) / patch, (p.y - off) / patch};
}

}  // namespace m2p
