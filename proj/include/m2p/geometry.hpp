#pragma once

#include <array>
#include <span>
#include <vector>

namespace m2p {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point2 a, Point2 b) = default;
};

double norm(Point2 p);
double dot(Point2 a, Point2 b);

/// Row-major 2x2 matrix: {m00, m01, m10, m11}.
struct Mat2 {
  std::array<double, 4> m{1.0, 0.0, 0.0, 1.0};

  double operator()(int r, int c) const { return m[r * 2 + c]; }
  double& operator()(int r, int c) { return m[r * 2 + c]; }

  static Mat2 identity() { return {}; }
  static Mat2 rotation(double theta);
  static Mat2 diag(double a, double b) { return {{a, 0.0, 0.0, b}}; }

  Mat2 transposed() const { return {{m[0], m[2], m[1], m[3]}}; }
  double det() const { return m[0] * m[3] - m[1] * m[2]; }
  double trace() const { return m[0] + m[3]; }

  friend Mat2 operator*(const Mat2& a, const Mat2& b);
  friend Point2 operator*(const Mat2& a, Point2 p);
};

struct Svd2Result {
  Mat2 u;
  std::array<double, 2> sigma{};
  Mat2 v;
};

/// Closed-form SVD of a 2x2 matrix, m = u * diag(sigma) * v^T with
/// sigma[0] >= sigma[1] >= 0. Either factor may carry the reflection.
Svd2Result svd2x2(const Mat2& m);

struct SimilarityTransform2D {
  double s = 1.0;
  Mat2 r;
  Point2 t;

  static SimilarityTransform2D identity() { return {}; }
};

/// Least-squares similarity transform mapping `template_pts` onto `target`
/// (Umeyama/Kabsch with reflection guard). Throws DegenerateInput when the
/// template points coincide or the optimal scale vanishes.
SimilarityTransform2D fit_similarity(std::span<const Point2> template_pts,
                                     std::span<const Point2> target);

Point2 apply_transform(const SimilarityTransform2D& t, Point2 p);

/// Sum of squared residuals ||target_i - T(template_i)||^2.
double alignment_residual(const SimilarityTransform2D& t,
                          std::span<const Point2> template_pts,
                          std::span<const Point2> target);

/// Jacobian of a propagated point T(p) with respect to each target point
/// used in the fit, where T = fit_similarity(template_pts, target).
///
/// In 2-D the optimal s*R is linear in the targets, so the Jacobian only
/// depends on the template geometry. Entry i is the 2x2 block d T(p) / d target_i.
std::vector<Mat2> propagation_jacobian(std::span<const Point2> template_pts, Point2 p);

}  // namespace m2p
