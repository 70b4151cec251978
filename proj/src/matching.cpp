#include "m2p/matching.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "m2p/errors.hpp"

namespace m2p {

BilinearTaps bilinear_taps(int height, int width, Point2 p) {
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1 && p.y <= height - 1)) {
    std::ostringstream msg;
    msg << "point (" << p.x << ", " << p.y << ") outside " << width << "x" << height << " grid";
    throw OutOfBounds(msg.str());
  }
  const int x0 = std::min(static_cast<int>(std::floor(p.x)), std::max(width - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(p.y)), std::max(height - 2, 0));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  BilinearTaps t;
  t.y = {y0, y0, y1, y1};
  t.x = {x0, x1, x0, x1};
  t.w = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  const double gx = x1 == x0 ? 0.0 : 1.0;
  const double gy = y1 == y0 ? 0.0 : 1.0;
  t.dw_dx = {-(1 - fy) * gx, (1 - fy) * gx, -fy * gx, fy * gx};
  t.dw_dy = {-(1 - fx) * gy, -fx * gy, (1 - fx) * gy, fx * gy};
  return t;
}

std::vector<double> bilinear_feature(const FeatureGrid& f, Point2 p) {
  const BilinearTaps t = bilinear_taps(f.height, f.width, p);
  std::vector<double> q(f.channels, 0.0);
  for (int i = 0; i < 4; ++i) {
    if (t.w[i] == 0.0) continue;
    const auto cell = f.at(t.y[i], t.x[i]);
    for (int c = 0; c < f.channels; ++c) q[c] += t.w[i] * cell[c];
  }
  return q;
}

Point2 bilinear_feature_backward(const FeatureGrid& f, Point2 p, std::span<const double> dq,
                                 FeatureGrid* df) {
  const BilinearTaps t = bilinear_taps(f.height, f.width, p);
  Point2 dp;
  for (int i = 0; i < 4; ++i) {
    const auto cell = f.at(t.y[i], t.x[i]);
    double proj = 0.0;
    for (int c = 0; c < f.channels; ++c) proj += dq[c] * cell[c];
    dp.x += t.dw_dx[i] * proj;
    dp.y += t.dw_dy[i] * proj;
    if (df != nullptr && t.w[i] != 0.0) {
      auto out = df->at(t.y[i], t.x[i]);
      for (int c = 0; c < f.channels; ++c) out[c] += t.w[i] * dq[c];
    }
  }
  return dp;
}

namespace {

double vec_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

NormalizedFeatures normalize_features(const FeatureGrid& f) {
  NormalizedFeatures out{FeatureGrid(f.height, f.width, f.channels), std::vector<double>(f.cells())};
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const auto src = f.at(y, x);
      const double n = vec_norm(src);
      if (!(n > 1e-12)) {
        std::ostringstream msg;
        msg << "feature at cell (" << x << ", " << y << ") has norm " << n;
        throw ZeroNormFeature(msg.str());
      }
      out.norms[static_cast<std::size_t>(y) * f.width + x] = n;
      auto dst = out.unit.at(y, x);
      for (int c = 0; c < f.channels; ++c) dst[c] = src[c] / n;
    }
  }
  return out;
}

ScalarMap correlation_map(std::span<const double> q, const FeatureGrid& f) {
  return correlation_map(q, normalize_features(f));
}

ScalarMap correlation_map(std::span<const double> q, const NormalizedFeatures& f) {
  const double qn = vec_norm(q);
  if (!(qn > 1e-12)) throw ZeroNormFeature("query feature has zero norm");
  const int ch = f.unit.channels;
  std::vector<double> qu(q.begin(), q.end());
  for (double& v : qu) v /= qn;
  ScalarMap out(f.unit.height, f.unit.width);
  const double* cell = f.unit.values.data();
  for (std::size_t i = 0; i < out.cells(); ++i, cell += ch) {
    double s = 0.0;
    for (int c = 0; c < ch; ++c) s += qu[c] * cell[c];
    out.values[i] = s;
  }
  return out;
}

void correlation_backward(std::span<const double> q, const NormalizedFeatures& f,
                          const ScalarMap& corr, const ScalarMap& dcorr, const Box& roi,
                          std::span<double> dq, FeatureGrid& df) {
  if (roi.empty()) return;
  const int ch = f.unit.channels;
  const double qn = vec_norm(q);
  std::vector<double> qu(q.begin(), q.end());
  for (double& v : qu) v /= qn;
  // d cos / d q = (fu - cos qu) / |q|,  d cos / d f = (qu - cos fu) / |f|
  std::vector<double> acc(ch, 0.0);
  double acc_c = 0.0;
  for (int y = roi.y0; y <= roi.y1; ++y) {
    for (int x = roi.x0; x <= roi.x1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * f.unit.width + x;
      const double g = dcorr.values[i];
      if (g == 0.0) continue;
      const double c = corr.values[i];
      const double* fu = f.unit.values.data() + i * ch;
      double* out = df.values.data() + i * ch;
      const double scale = g / f.norms[i];
      for (int k = 0; k < ch; ++k) {
        acc[k] += g * fu[k];
        out[k] += scale * (qu[k] - c * fu[k]);
      }
      acc_c += g * c;
    }
  }
  for (int k = 0; k < ch; ++k) dq[k] += (acc[k] - acc_c * qu[k]) / qn;
}

ScalarMap refine(const ScalarMap& c, const RefinerWeights& p, RefinerCache* cache) {
  const int h = c.height;
  const int w = c.width;
  const std::size_t n = c.cells();
  std::vector<double> pre(static_cast<std::size_t>(p.hidden) * n);
  for (int k = 0; k < p.hidden; ++k) {
    double* out = pre.data() + static_cast<std::size_t>(k) * n;
    std::fill(out, out + n, p.b1[k]);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const double wt = p.w1[k * 9 + (dy + 1) * 3 + (dx + 1)];
        if (wt == 0.0) continue;
        const int ylo = std::max(0, -dy), yhi = std::min(h, h - dy);
        const int xlo = std::max(0, -dx), xhi = std::min(w, w - dx);
        for (int y = ylo; y < yhi; ++y) {
          double* row = out + static_cast<std::size_t>(y) * w;
          const double* src = c.values.data() + static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = xlo; x < xhi; ++x) row[x] += wt * src[x];
        }
      }
    }
  }

  ScalarMap out(h, w, p.b2[0]);
  std::vector<double> act(n);
  for (int k = 0; k < p.hidden; ++k) {
    const double* pk = pre.data() + static_cast<std::size_t>(k) * n;
    for (std::size_t i = 0; i < n; ++i) act[i] = pk[i] > 0.0 ? pk[i] : 0.0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const double wt = p.w2[k * 9 + (dy + 1) * 3 + (dx + 1)];
        if (wt == 0.0) continue;
        const int ylo = std::max(0, -dy), yhi = std::min(h, h - dy);
        const int xlo = std::max(0, -dx), xhi = std::min(w, w - dx);
        for (int y = ylo; y < yhi; ++y) {
          double* row = out.values.data() + static_cast<std::size_t>(y) * w;
          const double* src = act.data() + static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = xlo; x < xhi; ++x) row[x] += wt * src[x];
        }
      }
    }
  }
  if (cache != nullptr) cache->pre = std::move(pre);
  return out;
}

Box refine_backward(const ScalarMap& c, const RefinerWeights& p, const RefinerCache& cache,
                    const ScalarMap& dh, const Box& roi, ScalarMap& dc, const RefinerGrads& g) {
  if (roi.empty()) return roi;
  const int h = c.height;
  const int w = c.width;
  const std::size_t n = c.cells();
  const Box r1 = roi.grown(1, h, w);
  const Box r2 = r1.grown(1, h, w);

  for (int y = roi.y0; y <= roi.y1; ++y) {
    for (int x = roi.x0; x <= roi.x1; ++x) g.b2[0] += dh.at(y, x);
  }

  std::vector<double> dpre(n, 0.0);
  for (int k = 0; k < p.hidden; ++k) {
    const double* pk = cache.pre.data() + static_cast<std::size_t>(k) * n;
    std::fill(dpre.begin(), dpre.end(), 0.0);
    // Second layer: out(y,x) += w2[k,tap] * act_k(y+dy, x+dx).
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int tap = k * 9 + (dy + 1) * 3 + (dx + 1);
        const double wt = p.w2[tap];
        double gw = 0.0;
        const int ylo = std::max(roi.y0, -dy), yhi = std::min(roi.y1, h - 1 - dy);
        const int xlo = std::max(roi.x0, -dx), xhi = std::min(roi.x1, w - 1 - dx);
        for (int y = ylo; y <= yhi; ++y) {
          const double* grow = dh.values.data() + static_cast<std::size_t>(y) * w;
          const double* arow = pk + static_cast<std::size_t>(y + dy) * w + dx;
          double* drow = dpre.data() + static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = xlo; x <= xhi; ++x) {
            const double a = arow[x] > 0.0 ? arow[x] : 0.0;
            gw += grow[x] * a;
            drow[x] += wt * grow[x];
          }
        }
        g.w2[tap] += gw;
      }
    }
    // ReLU gate.
    for (int y = r1.y0; y <= r1.y1; ++y) {
      for (int x = r1.x0; x <= r1.x1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!(pk[i] > 0.0)) dpre[i] = 0.0;
      }
    }
    double gb = 0.0;
    for (int y = r1.y0; y <= r1.y1; ++y) {
      for (int x = r1.x0; x <= r1.x1; ++x) gb += dpre[static_cast<std::size_t>(y) * w + x];
    }
    g.b1[k] += gb;
    // First layer: pre_k(y,x) += w1[k,tap] * c(y+dy, x+dx).
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int tap = k * 9 + (dy + 1) * 3 + (dx + 1);
        const double wt = p.w1[tap];
        double gw = 0.0;
        const int ylo = std::max(r1.y0, -dy), yhi = std::min(r1.y1, h - 1 - dy);
        const int xlo = std::max(r1.x0, -dx), xhi = std::min(r1.x1, w - 1 - dx);
        for (int y = ylo; y <= yhi; ++y) {
          const double* grow = dpre.data() + static_cast<std::size_t>(y) * w;
          const double* crow = c.values.data() + static_cast<std::size_t>(y + dy) * w + dx;
          double* drow = dc.values.data() + static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = xlo; x <= xhi; ++x) {
            gw += grow[x] * crow[x];
            drow[x] += wt * grow[x];
          }
        }
        g.w1[tap] += gw;
      }
    }
  }
  return r2;
}

PointPrediction soft_argmax(const ScalarMap& h, double radius, double temperature) {
  PointPrediction out;
  const auto best = std::max_element(h.values.begin(), h.values.end());
  const std::size_t idx = static_cast<std::size_t>(best - h.values.begin());
  out.peak = {static_cast<int>(idx % h.width), static_cast<int>(idx / h.width)};
  out.peak_score = *best;

  out.softmax_map = ScalarMap(h.height, h.width);
  double z = 0.0;
  for (std::size_t i = 0; i < h.cells(); ++i) {
    const double e = std::exp(temperature * (h.values[i] - out.peak_score));
    out.softmax_map.values[i] = e;
    z += e;
  }
  for (double& v : out.softmax_map.values) v /= z;

  const int r = static_cast<int>(std::floor(radius));
  const double r2 = radius * radius;
  double zl = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int y = out.peak.y + dy;
      const int x = out.peak.x + dx;
      if (y < 0 || x < 0 || y >= h.height || x >= h.width) continue;
      if (double(dx) * dx + double(dy) * dy > r2) continue;
      const double e = std::exp(temperature * (h.at(y, x) - out.peak_score));
      out.neighborhood.push_back({x, y});
      out.local_weights.push_back(e);
      zl += e;
    }
  }
  for (std::size_t i = 0; i < out.neighborhood.size(); ++i) {
    out.local_weights[i] /= zl;
    out.position.x += out.local_weights[i] * out.neighborhood[i].x;
    out.position.y += out.local_weights[i] * out.neighborhood[i].y;
  }
  return out;
}

namespace {

void include(Box& roi, int y, int x) {
  if (roi.empty()) {
    roi = {y, x, y, x};
    return;
  }
  roi.y0 = std::min(roi.y0, y);
  roi.x0 = std::min(roi.x0, x);
  roi.y1 = std::max(roi.y1, y);
  roi.x1 = std::max(roi.x1, x);
}

}  // namespace

void soft_argmax_backward(const PointPrediction& pred, double temperature, Point2 dpos,
                          ScalarMap& dh, Box& roi) {
  if (dpos.x == 0.0 && dpos.y == 0.0) return;
  // d pos / d h_b = T * w_b * (coord_b - pos)
  for (std::size_t i = 0; i < pred.neighborhood.size(); ++i) {
    const Cell c = pred.neighborhood[i];
    const double proj = dpos.x * (c.x - pred.position.x) + dpos.y * (c.y - pred.position.y);
    dh.at(c.y, c.x) += temperature * pred.local_weights[i] * proj;
    include(roi, c.y, c.x);
  }
}

double mask_mass(const ScalarMap& softmax, const Mask& m) {
  if (m.width != softmax.width || m.height != softmax.height) {
    throw DimMismatch("mask and softmax map differ in size");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < softmax.cells(); ++i) {
    if (m.bits[i]) s += softmax.values[i];
  }
  return s;
}

void mask_mass_backward(const ScalarMap& softmax, const Mask& m, double mass, double dmass,
                        double temperature, ScalarMap& dh, Box& roi) {
  if (dmass == 0.0) return;
  for (std::size_t i = 0; i < softmax.cells(); ++i) {
    const double mi = m.bits[i] ? 1.0 : 0.0;
    dh.values[i] += dmass * temperature * softmax.values[i] * (mi - mass);
  }
  include(roi, 0, 0);
  include(roi, softmax.height - 1, softmax.width - 1);
}

QueryTrace match_query(const FeatureGrid& tmpl, const NormalizedFeatures& target, Point2 query,
                       const RefinerWeights& refiner, const MatchOptions& opt) {
  QueryTrace tr;
  tr.query = query;
  tr.feature = bilinear_feature(tmpl, query);
  tr.corr = correlation_map(tr.feature, target);
  tr.refined = refine(tr.corr, refiner, &tr.cache);
  tr.pred = soft_argmax(tr.refined, opt.radius, opt.temperature);
  return tr;
}

void match_query_backward(const QueryTrace& tr, const FeatureGrid& tmpl,
                          const NormalizedFeatures& target, const RefinerWeights& refiner,
                          const MatchOptions& opt, const QueryUpstream& up, FeatureGrid& d_tmpl,
                          FeatureGrid& d_target, const RefinerGrads& g) {
  const int h = tr.refined.height;
  const int w = tr.refined.width;
  ScalarMap dh(h, w);
  Box roi;
  soft_argmax_backward(tr.pred, opt.temperature, up.dpos, dh, roi);
  if (up.mask != nullptr) {
    mask_mass_backward(tr.pred.softmax_map, *up.mask, up.mass, up.dmass, opt.temperature, dh, roi);
  }
  if (roi.empty()) return;
  ScalarMap dc(h, w);
  const Box croi = refine_backward(tr.corr, refiner, tr.cache, dh, roi, dc, g);
  std::vector<double> dq(tr.feature.size(), 0.0);
  correlation_backward(tr.feature, target, tr.corr, dc, croi, dq, d_target);
  bilinear_feature_backward(tmpl, tr.query, dq, &d_tmpl);
}

}  // namespace m2p
