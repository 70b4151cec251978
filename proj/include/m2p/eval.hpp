#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "m2p/data.hpp"
#include "m2p/matching.hpp"
#include "m2p/model.hpp"

namespace m2p {

inline constexpr std::array<double, 5> kDeltaThresholds{1.0, 2.0, 4.0, 8.0, 16.0};

struct DeltaReport {
  std::array<double, 5> delta{};
  double delta_avg = 0.0;
  std::size_t n_points = 0;
};

/// A point query in image coordinates.
struct TrackQuery {
  int track_id = 0;
  int frame = 0;
  Point2 position;
};

/// Tracks every query through every frame of the clip (grid-resolution
/// matching, positions mapped back to image pixels). Visibility is always
/// reported true. Throws OutOfBounds for queries outside the image.
TrackSet track_points(const ModelParams& params, const Clip& clip, std::span<const TrackQuery> queries,
                      const MatchOptions& opt);

/// Fraction of ground-truth-visible points (query frame excluded) whose
/// prediction lies strictly within each threshold, measured after rescaling
/// the frame to eval_resolution x eval_resolution. Predicted tracks are
/// matched to ground truth by id; ground-truth tracks without a prediction
/// are not scored. Throws MismatchedTracks for unknown ids, length
/// mismatches, or when nothing is left to score.
DeltaReport delta_metrics(const TrackSet& pred, const TrackSet& gt, int frame_width,
                          int frame_height, double eval_resolution = 256.0);

enum class QueryMode { First, Strided };
QueryMode parse_query_mode(const std::string& s);
std::string to_string(QueryMode m);

/// Queries derived from ground truth: first visible frame per track, or
/// every `stride` frames where the track is visible.
std::vector<TrackQuery> make_queries(const TrackSet& gt, QueryMode mode, int stride = 5);

using Tracker = std::function<TrackSet(const Clip&, std::span<const TrackQuery>)>;
Tracker model_tracker(const ModelParams& params, const MatchOptions& opt);

struct ClipReport {
  std::string clip;
  QueryMode mode = QueryMode::First;
  DeltaReport report;
};

struct EvalReport {
  std::vector<ClipReport> clips;
  DeltaReport aggregate;  // mean over clips of each fraction
};

/// Evaluates every clip (which must carry ground truth); clips are
/// processed concurrently up to `threads`, aggregated in clip order.
EvalReport evaluate(const Tracker& tracker, std::span<const Clip> clips,
                    std::span<const std::string> names, QueryMode mode, double eval_resolution = 256.0,
                    int threads = 1);

/// Per-clip CSV (clip,mode,delta1,...,delta_avg,n_points) and aggregate JSON.
void write_eval_report(const EvalReport& r, const std::filesystem::path& csv_path,
                       const std::filesystem::path& json_path);

}  // namespace m2p
