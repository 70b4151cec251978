#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "m2p/geometry.hpp"
#include "m2p/grid.hpp"
#include "m2p/maskops.hpp"
#include "m2p/sampling.hpp"

namespace m2p {

/// Indices of the top-k_e entries by score, descending; ties by index.
/// Throws GroupTooSmall when fewer than k_e scores are given.
std::vector<std::size_t> select_reliable(std::span<const double> scores, std::size_t k_e);

/// Huber penalty on the residual norm r: r^2/2 for r <= delta, else
/// delta * (r - delta/2).
double huber(Point2 residual, double delta);
/// Gradient of huber() with respect to the residual vector.
Point2 huber_grad(Point2 residual, double delta);

/// Per-point network outputs consumed by the losses, laid out like the
/// QueryGroupSet they were produced from.
struct GroupPredictions {
  std::vector<std::vector<Point2>> positions;
  std::vector<std::vector<double>> scores;
};

struct LscOptions {
  std::size_t k_e = 3;
  double huber_delta = 1.0;
  bool detach_targets = true;
  int grid_width = 0;   // targets outside [0, w-1] x [0, h-1] are dropped
  int grid_height = 0;
};

struct LscResult {
  double loss = 0.0;
  /// dL/dposition for every point (same layout as the predictions).
  std::vector<std::vector<Point2>> dpos;
  std::size_t supervised = 0;
  std::size_t skipped_groups = 0;
  std::size_t out_of_grid = 0;
  /// Propagated pseudo-label per point; only meaningful where supervised.
  std::vector<std::vector<Point2>> targets;
  std::vector<std::vector<bool>> is_supervised;
};

/// Local-structure consistency. `proposals` supply the reliable-pair
/// selection and Procrustes fit (pass `predictions` itself for the live
/// proposer). Throws NoValidGroup when every group is skipped.
LscResult lsc_loss(const QueryGroupSet& groups, const GroupPredictions& predictions,
                   const GroupPredictions& proposals, const LscOptions& opt);

struct MlcResult {
  double loss = 0.0;
  std::vector<double> mass;   // S per point, flattened in group order
  std::vector<double> dmass;  // dL/dS per point
  std::size_t active = 0;
};

/// Mask-label consistency on foreground masses S: -log(S + eps) when
/// S <= tau, averaged over all points.
MlcResult mlc_loss_from_mass(std::span<const double> mass, double tau, double eps);
MlcResult mlc_loss(std::span<const ScalarMap* const> softmax_maps, const Mask& target_mask,
                   double tau, double eps);

struct MbcResult {
  double loss = 0.0;
  std::vector<std::vector<Point2>> dpos;
};

/// Mask-boundary consistency between normalised boundary-distance profiles
/// of template points and predicted points, averaged over groups. Predicted
/// points are clamped into the target grid.
MbcResult mbc_loss(const QueryGroupSet& groups, const DistanceField& template_field,
                   const std::vector<std::vector<Point2>>& predicted,
                   const DistanceField& target_field, double eps);

/// Per-group term from raw distances; exposed for hand checks.
double mbc_group_term(std::span<const double> d_template, std::span<const double> d_target,
                      double eps);

struct LossBreakdown {
  double l_lsc = 0.0;
  double l_mlc = 0.0;
  double l_mbc = 0.0;
  double l_total = 0.0;
  std::size_t supervised_points = 0;
  std::size_t skipped_groups = 0;
  std::size_t mlc_active = 0;
  std::size_t mlc_points = 0;
};

inline constexpr std::array<double, 3> kPaperLambdas{0.02, 0.5, 10.0};

LossBreakdown total_loss(double l_lsc, double l_mlc, double l_mbc,
                         const std::array<double, 3>& lambdas = kPaperLambdas);

}  // namespace m2p
