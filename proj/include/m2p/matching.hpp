#pragma once

#include <array>
#include <span>
#include <vector>

#include "m2p/geometry.hpp"
#include "m2p/grid.hpp"
#include "m2p/maskops.hpp"

namespace m2p {

// ---------------------------------------------------------------------------
// Bilinear query features

struct BilinearTaps {
  std::array<int, 4> y{};
  std::array<int, 4> x{};
  std::array<double, 4> w{};
  std::array<double, 4> dw_dx{};
  std::array<double, 4> dw_dy{};
};

/// Interpolation taps for p in the cell-centre frame. Throws OutOfBounds.
BilinearTaps bilinear_taps(int height, int width, Point2 p);

std::vector<double> bilinear_feature(const FeatureGrid& f, Point2 p);

/// Accumulates dL/dF into `df` (may be null) and returns dL/dp.
Point2 bilinear_feature_backward(const FeatureGrid& f, Point2 p, std::span<const double> dq,
                                 FeatureGrid* df);

// ---------------------------------------------------------------------------
// Cosine correlation

/// Unit-normalised copy of a feature grid together with the original norms.
struct NormalizedFeatures {
  FeatureGrid unit;
  std::vector<double> norms;
};

/// Throws ZeroNormFeature when any cell norm is <= 1e-12.
NormalizedFeatures normalize_features(const FeatureGrid& f);

/// values(y, x) = <q, f(y, x)> / (|q| |f(y, x)|). Throws ZeroNormFeature.
ScalarMap correlation_map(std::span<const double> q, const FeatureGrid& f);
ScalarMap correlation_map(std::span<const double> q, const NormalizedFeatures& f);

/// Backward of the cosine map restricted to `roi` (cells outside are assumed
/// to carry zero upstream gradient). Accumulates into dq and df.
void correlation_backward(std::span<const double> q, const NormalizedFeatures& f,
                          const ScalarMap& corr, const ScalarMap& dcorr, const Box& roi,
                          std::span<double> dq, FeatureGrid& df);

// ---------------------------------------------------------------------------
// Refiner head: conv3x3(1 -> hidden) -> ReLU -> conv3x3(hidden -> 1), zero padding.

struct RefinerWeights {
  int hidden = 16;
  std::span<const double> w1;  // hidden x 3 x 3
  std::span<const double> b1;  // hidden
  std::span<const double> w2;  // hidden x 3 x 3 (single output channel)
  std::span<const double> b2;  // 1
};

struct RefinerGrads {
  std::span<double> w1, b1, w2, b2;
};

/// Owning refiner parameters, mainly for tests and standalone use.
struct RefinerParams {
  int hidden = 16;
  std::vector<double> w1, b1, w2, b2;

  explicit RefinerParams(int h = 16)
      : hidden(h), w1(h * 9, 0.0), b1(h, 0.0), w2(h * 9, 0.0), b2(1, 0.0) {}
  RefinerWeights view() const { return {hidden, w1, b1, w2, b2}; }
  RefinerGrads grads() { return {w1, b1, w2, b2}; }
};

struct RefinerCache {
  std::vector<double> pre;  // hidden x cells, pre-activation of the first layer
};

ScalarMap refine(const ScalarMap& c, const RefinerWeights& p, RefinerCache* cache = nullptr);

/// Backward through the refiner for an upstream gradient supported on `roi`.
/// Accumulates parameter gradients into `g` and input gradients into `dc`;
/// returns the box that bounds the support of dc.
Box refine_backward(const ScalarMap& c, const RefinerWeights& p, const RefinerCache& cache,
                    const ScalarMap& dh, const Box& roi, ScalarMap& dc, const RefinerGrads& g);

// ---------------------------------------------------------------------------
// Soft-argmax localisation

struct PointPrediction {
  Point2 position;
  double peak_score = 0.0;
  Cell peak;
  ScalarMap softmax_map;              // temperature softmax over all cells
  std::vector<Cell> neighborhood;     // cells of the disc around the peak
  std::vector<double> local_weights;  // softmax restricted to the disc
};

/// Integer argmax (lowest row-major index on ties), disc of `radius` cells
/// around it, and the softmax-weighted mean of disc coordinates.
PointPrediction soft_argmax(const ScalarMap& h, double radius, double temperature);

/// dL/dh from dL/dposition; accumulates into dh and grows `roi`.
void soft_argmax_backward(const PointPrediction& pred, double temperature, Point2 dpos,
                          ScalarMap& dh, Box& roi);

/// Softmax mass inside the mask, sum(softmax * mask).
double mask_mass(const ScalarMap& softmax, const Mask& m);

/// dL/dh from dL/dS for S = mask_mass; touches every cell.
void mask_mass_backward(const ScalarMap& softmax, const Mask& m, double mass, double dmass,
                        double temperature, ScalarMap& dh, Box& roi);

// ---------------------------------------------------------------------------
// One query end to end

struct MatchOptions {
  double radius = 3.0;
  double temperature = 20.0;
};

struct QueryTrace {
  Point2 query;
  std::vector<double> feature;
  ScalarMap corr;
  RefinerCache cache;
  ScalarMap refined;
  PointPrediction pred;
};

QueryTrace match_query(const FeatureGrid& tmpl, const NormalizedFeatures& target, Point2 query,
                       const RefinerWeights& refiner, const MatchOptions& opt);

/// Upstream gradients for one query: position and (optionally) the
/// foreground mass used by the mask-label term.
struct QueryUpstream {
  Point2 dpos;
  double dmass = 0.0;
  double mass = 0.0;
  const Mask* mask = nullptr;
};

void match_query_backward(const QueryTrace& tr, const FeatureGrid& tmpl,
                          const NormalizedFeatures& target, const RefinerWeights& refiner,
                          const MatchOptions& opt, const QueryUpstream& up, FeatureGrid& d_tmpl,
                          FeatureGrid& d_target, const RefinerGrads& g);

}  // namespace m2p
