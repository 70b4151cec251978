#include "m2p/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "m2p/errors.hpp"
#include "m2p/matching.hpp"

namespace m2p {

std::vector<std::size_t> select_reliable(std::span<const double> scores, std::size_t k_e) {
  if (scores.size() < k_e) {
    throw GroupTooSmall("group has " + std::to_string(scores.size()) + " points, need " +
                        std::to_string(k_e));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k_e);
  return idx;
}

double huber(Point2 residual, double delta) {
  const double r = norm(residual);
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

Point2 huber_grad(Point2 residual, double delta) {
  const double r = norm(residual);
  if (r <= delta) return residual;
  return (delta / r) * residual;
}

LscResult lsc_loss(const QueryGroupSet& groups, const GroupPredictions& predictions,
                   const GroupPredictions& proposals, const LscOptions& opt) {
  const std::size_t ng = groups.groups.size();
  LscResult res;
  res.dpos.resize(ng);
  res.targets.resize(ng);
  res.is_supervised.resize(ng);

  struct Term {
    std::size_t g, j;
    Point2 grad;
  };
  std::vector<Term> terms;
  struct Attached {
    std::size_t g;
    std::vector<std::size_t> reliable;
    std::vector<Point2> reliable_template;
  };
  std::vector<Attached> fits(ng);
  double sum = 0.0;

  for (std::size_t g = 0; g < ng; ++g) {
    const auto& pts = groups.groups[g];
    res.dpos[g].assign(pts.size(), Point2{});
    res.targets[g].assign(pts.size(), Point2{});
    res.is_supervised[g].assign(pts.size(), false);
    if (pts.size() < opt.k_e + 1) {
      ++res.skipped_groups;
      continue;
    }
    const std::vector<std::size_t> rel = select_reliable(proposals.scores[g], opt.k_e);
    std::vector<Point2> src, dst;
    for (std::size_t i : rel) {
      src.push_back(pts[i]);
      dst.push_back(proposals.positions[g][i]);
    }
    SimilarityTransform2D t;
    try {
      t = fit_similarity(src, dst);
    } catch (const DegenerateInput&) {
      ++res.skipped_groups;
      continue;
    }
    fits[g] = {g, rel, src};
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (std::find(rel.begin(), rel.end(), j) != rel.end()) continue;
      const Point2 target = apply_transform(t, pts[j]);
      if (!(target.x >= 0.0 && target.y >= 0.0 && target.x <= opt.grid_width - 1 &&
            target.y <= opt.grid_height - 1)) {
        ++res.out_of_grid;
        continue;
      }
      const Point2 r = predictions.positions[g][j] - target;
      sum += huber(r, opt.huber_delta);
      terms.push_back({g, j, huber_grad(r, opt.huber_delta)});
      res.targets[g][j] = target;
      res.is_supervised[g][j] = true;
    }
  }
  if (res.skipped_groups == ng) throw NoValidGroup();

  res.supervised = terms.size();
  if (terms.empty()) return res;
  const double inv = 1.0 / static_cast<double>(terms.size());
  res.loss = sum * inv;
  for (const Term& term : terms) {
    res.dpos[term.g][term.j] = res.dpos[term.g][term.j] + inv * term.grad;
    if (opt.detach_targets) continue;
    // Target = T(p_j) depends linearly on the reliable predictions.
    const Attached& fit = fits[term.g];
    const auto jac = propagation_jacobian(fit.reliable_template, groups.groups[term.g][term.j]);
    for (std::size_t k = 0; k < fit.reliable.size(); ++k) {
      const Mat2 jt = jac[k].transposed();
      res.dpos[term.g][fit.reliable[k]] = res.dpos[term.g][fit.reliable[k]] - inv * (jt * term.grad);
    }
  }
  return res;
}

MlcResult mlc_loss_from_mass(std::span<const double> mass, double tau, double eps) {
  MlcResult res;
  res.mass.assign(mass.begin(), mass.end());
  res.dmass.assign(mass.size(), 0.0);
  if (mass.empty()) return res;
  const double inv = 1.0 / static_cast<double>(mass.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (mass[i] > tau) continue;
    ++res.active;
    sum += -std::log(mass[i] + eps);
    res.dmass[i] = -inv / (mass[i] + eps);
  }
  res.loss = sum * inv;
  return res;
}

MlcResult mlc_loss(std::span<const ScalarMap* const> softmax_maps, const Mask& target_mask,
                   double tau, double eps) {
  std::vector<double> mass;
  mass.reserve(softmax_maps.size());
  for (const ScalarMap* m : softmax_maps) mass.push_back(mask_mass(*m, target_mask));
  return mlc_loss_from_mass(mass, tau, eps);
}

namespace {

struct GroupGrad {
  double value = 0.0;
  std::vector<double> d_target;  // dL_g / d d_target_i
};

GroupGrad mbc_group(std::span<const double> d0, std::span<const double> dt, double eps) {
  const std::size_t k = d0.size();
  const double s0 = std::accumulate(d0.begin(), d0.end(), 0.0) + eps;
  const double st = std::accumulate(dt.begin(), dt.end(), 0.0) + eps;
  std::vector<double> w(k);
  double wsum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(-d0[i]);
    wsum += w[i];
  }
  const double denom = wsum + eps;
  GroupGrad out;
  out.d_target.assign(k, 0.0);
  std::vector<double> gn(k);  // dL / d normalised target distance
  double cross = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double diff = d0[i] / s0 - dt[i] / st;
    out.value += w[i] * std::abs(diff);
    const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    gn[i] = -w[i] * sgn / denom;
    cross += gn[i] * dt[i];
  }
  out.value /= denom;
  for (std::size_t i = 0; i < k; ++i) out.d_target[i] = gn[i] / st - cross / (st * st);
  return out;
}

}  // namespace

double mbc_group_term(std::span<const double> d_template, std::span<const double> d_target,
                      double eps) {
  return mbc_group(d_template, d_target, eps).value;
}

MbcResult mbc_loss(const QueryGroupSet& groups, const DistanceField& template_field,
                   const std::vector<std::vector<Point2>>& predicted,
                   const DistanceField& target_field, double eps) {
  MbcResult res;
  const std::size_t ng = groups.groups.size();
  res.dpos.resize(ng);
  if (ng == 0) return res;
  const double inv_g = 1.0 / static_cast<double>(ng);
  const double xmax = target_field.width - 1;
  const double ymax = target_field.height - 1;
  for (std::size_t g = 0; g < ng; ++g) {
    const auto& pts = groups.groups[g];
    const std::size_t k = pts.size();
    std::vector<double> d0(k), dt(k);
    std::vector<Point2> grad(k);
    for (std::size_t i = 0; i < k; ++i) {
      d0[i] = sample_distance(template_field, pts[i]).value;
      Point2 p = predicted[g][i];
      const bool cx = p.x < 0.0 || p.x > xmax;
      const bool cy = p.y < 0.0 || p.y > ymax;
      p.x = std::clamp(p.x, 0.0, xmax);
      p.y = std::clamp(p.y, 0.0, ymax);
      const DistanceSample s = sample_distance(target_field, p);
      dt[i] = s.value;
      grad[i] = {cx ? 0.0 : s.grad.x, cy ? 0.0 : s.grad.y};
    }
    const GroupGrad gg = mbc_group(d0, dt, eps);
    res.loss += gg.value * inv_g;
    res.dpos[g].resize(k);
    for (std::size_t i = 0; i < k; ++i) res.dpos[g][i] = (gg.d_target[i] * inv_g) * grad[i];
  }
  return res;
}

LossBreakdown total_loss(double l_lsc, double l_mlc, double l_mbc,
                         const std::array<double, 3>& lambdas) {
  LossBreakdown b;
  b.l_lsc = l_lsc;
  b.l_mlc = l_mlc;
  b.l_mbc = l_mbc;
  b.l_total = lambdas[0] * l_lsc + lambdas[1] * l_mlc + lambdas[2] * l_mbc;
  return b;
}

}  // namespace m2p
