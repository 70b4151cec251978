#include "m2p/geometry.hpp"

#include <cmath>
#include <string>

#include "m2p/errors.hpp"

namespace m2p {

double norm(Point2 p) { return std::hypot(p.x, p.y); }
double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }

Mat2 Mat2::rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {{c, -s, s, c}};
}

Mat2 operator*(const Mat2& a, const Mat2& b) {
  return {{a.m[0] * b.m[0] + a.m[1] * b.m[2], a.m[0] * b.m[1] + a.m[1] * b.m[3],
           a.m[2] * b.m[0] + a.m[3] * b.m[2], a.m[2] * b.m[1] + a.m[3] * b.m[3]}};
}

Point2 operator*(const Mat2& a, Point2 p) {
  return {a.m[0] * p.x + a.m[1] * p.y, a.m[2] * p.x + a.m[3] * p.y};
}

Svd2Result svd2x2(const Mat2& m) {
  // m = rot(phi) * diag(q + r, q - r) * rot(theta), from splitting m into a
  // scaled rotation plus a scaled reflection.
  const double e = 0.5 * (m(0, 0) + m(1, 1));
  const double f = 0.5 * (m(0, 0) - m(1, 1));
  const double g = 0.5 * (m(1, 0) + m(0, 1));
  const double h = 0.5 * (m(1, 0) - m(0, 1));
  const double q = std::hypot(e, h);
  const double r = std::hypot(f, g);
  const double a1 = std::atan2(g, f);
  const double a2 = std::atan2(h, e);
  const double theta = 0.5 * (a2 - a1);
  const double phi = 0.5 * (a2 + a1);

  Svd2Result out;
  out.u = Mat2::rotation(phi);
  out.v = Mat2::rotation(-theta);
  out.sigma = {q + r, q - r};
  if (out.sigma[1] < 0.0) {
    out.sigma[1] = -out.sigma[1];
    out.v(0, 1) = -out.v(0, 1);
    out.v(1, 1) = -out.v(1, 1);
  }
  return out;
}

namespace {

struct Centered {
  Point2 mean_template;
  Point2 mean_target;
  double template_spread = 0.0;  // sum of squared centered template norms
};

Centered center(std::span<const Point2> template_pts, std::span<const Point2> target) {
  if (template_pts.size() != target.size()) {
    throw DegenerateInput("correspondence lists differ in length");
  }
  if (template_pts.size() < 2) {
    throw DegenerateInput("need at least 2 correspondences, got " +
                          std::to_string(template_pts.size()));
  }
  const double n = static_cast<double>(template_pts.size());
  Centered c;
  for (std::size_t i = 0; i < template_pts.size(); ++i) {
    c.mean_template = c.mean_template + template_pts[i];
    c.mean_target = c.mean_target + target[i];
  }
  c.mean_template = (1.0 / n) * c.mean_template;
  c.mean_target = (1.0 / n) * c.mean_target;
  for (const Point2& p : template_pts) {
    const Point2 d = p - c.mean_template;
    c.template_spread += dot(d, d);
  }
  if (c.template_spread < 1e-12) {
    throw DegenerateInput("template points coincide; scale is undefined");
  }
  return c;
}

}  // namespace

SimilarityTransform2D fit_similarity(std::span<const Point2> template_pts,
                                     std::span<const Point2> target) {
  const Centered c = center(template_pts, target);

  // Cross-covariance H = sum_i p'_i * ptilde'_i^T (template x target^T), so
  // that R = V D U^T maps template directions onto target directions.
  Mat2 h{{0.0, 0.0, 0.0, 0.0}};
  for (std::size_t i = 0; i < template_pts.size(); ++i) {
    const Point2 p = template_pts[i] - c.mean_template;
    const Point2 q = target[i] - c.mean_target;
    h(0, 0) += p.x * q.x;
    h(0, 1) += p.x * q.y;
    h(1, 0) += p.y * q.x;
    h(1, 1) += p.y * q.y;
  }

  const Svd2Result svd = svd2x2(h);
  const double d = (svd.v * svd.u.transposed()).det() < 0.0 ? -1.0 : 1.0;
  SimilarityTransform2D out;
  out.r = svd.v * Mat2::diag(1.0, d) * svd.u.transposed();
  out.s = (svd.sigma[0] + d * svd.sigma[1]) / c.template_spread;
  if (!(out.s > 1e-12)) {
    throw DegenerateInput("target points coincide; fitted scale is zero");
  }
  out.t = c.mean_target - out.s * (out.r * c.mean_template);
  return out;
}

Point2 apply_transform(const SimilarityTransform2D& t, Point2 p) {
  return t.s * (t.r * p) + t.t;
}

double alignment_residual(const SimilarityTransform2D& t,
                          std::span<const Point2> template_pts,
                          std::span<const Point2> target) {
  double sum = 0.0;
  for (std::size_t i = 0; i < template_pts.size(); ++i) {
    const Point2 d = target[i] - apply_transform(t, template_pts[i]);
    sum += dot(d, d);
  }
  return sum;
}

std::vector<Mat2> propagation_jacobian(std::span<const Point2> template_pts, Point2 p) {
  // T(p) = mean_target + (a * d + b * J d) / spread with d = p - mean_template,
  // a = sum p'_i . target_i and b = sum p'_i x target_i; J is rot(90deg).
  const Centered c = center(template_pts, template_pts);
  const double inv_n = 1.0 / static_cast<double>(template_pts.size());
  const Point2 d = p - c.mean_template;
  const Point2 jd{-d.y, d.x};
  std::vector<Mat2> out;
  out.reserve(template_pts.size());
  for (const Point2& tp : template_pts) {
    const Point2 pc = tp - c.mean_template;
    const Point2 jpc{-pc.y, pc.x};
    Mat2 m;
    for (int r = 0; r < 2; ++r) {
      const double dr = r == 0 ? d.x : d.y;
      const double jdr = r == 0 ? jd.x : jd.y;
      m(r, 0) = (r == 0 ? inv_n : 0.0) + (dr * pc.x + jdr * jpc.x) / c.template_spread;
      m(r, 1) = (r == 1 ? inv_n : 0.0) + (dr * pc.y + jdr * jpc.y) / c.template_spread;
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace m2p
