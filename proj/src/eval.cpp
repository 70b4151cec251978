#include "m2p/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"
#include "m2p/errors.hpp"
#include "m2p/parallel.hpp"

namespace m2p {

TrackSet track_points(const ModelParams& params, const Clip& clip, std::span<const TrackQuery> queries,
                      const MatchOptions& opt) {
  const int patch = params.config.patch;
  for (const TrackQuery& q : queries) {
    if (q.frame < 0 || q.frame >= clip.num_frames()) {
      throw OutOfBounds("query frame " + std::to_string(q.frame) + " outside clip");
    }
    if (!(q.position.x >= 0.0 && q.position.y >= 0.0 && q.position.x <= clip.width - 1 &&
          q.position.y <= clip.height - 1)) {
      throw OutOfBounds("query outside the image");
    }
  }
  std::vector<FeatureGrid> feats;
  std::vector<NormalizedFeatures> normed;
  for (const Image& img : clip.frames) {
    feats.push_back(forward(params, img));
    normed.push_back(normalize_features(feats.back()));
  }
  const RefinerWeights refiner = params.refiner();
  TrackSet out;
  for (const TrackQuery& q : queries) {
    const FeatureGrid& src = feats[q.frame];
    Point2 g = image_to_grid(q.position, patch);
    g.x = std::clamp(g.x, 0.0, static_cast<double>(src.width - 1));
    g.y = std::clamp(g.y, 0.0, static_cast<double>(src.height - 1));
    const std::vector<double> feature = bilinear_feature(src, g);
    Track t;
    t.id = q.track_id;
    t.object = -1;
    t.query_frame = q.frame;
    for (int f = 0; f < clip.num_frames(); ++f) {
      const ScalarMap refined = refine(correlation_map(feature, normed[f]), refiner);
      const PointPrediction pred = soft_argmax(refined, opt.radius, opt.temperature);
      const Point2 img = grid_to_image(pred.position, patch);
      t.points.push_back({img.x, img.y, true});
    }
    out.tracks.push_back(std::move(t));
  }
  return out;
}

DeltaReport delta_metrics(const TrackSet& pred, const TrackSet& gt, int frame_width,
                          int frame_height, double eval_resolution) {
  std::map<int, const Track*> by_id;
  for (const Track& t : gt.tracks) by_id[t.id] = &t;
  const double sx = eval_resolution / frame_width;
  const double sy = eval_resolution / frame_height;
  std::array<std::size_t, 5> hits{};
  std::size_t total = 0;
  for (const Track& p : pred.tracks) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) throw MismatchedTracks("no ground truth for track " + std::to_string(p.id));
    const Track& g = *it->second;
    if (g.points.size() != p.points.size()) {
      throw MismatchedTracks("track " + std::to_string(p.id) + " frame counts differ");
    }
    for (std::size_t f = 0; f < g.points.size(); ++f) {
      if (!g.points[f].visible || static_cast<int>(f) == p.query_frame) continue;
      const double dx = (p.points[f].x - g.points[f].x) * sx;
      const double dy = (p.points[f].y - g.points[f].y) * sy;
      const double d = std::sqrt(dx * dx + dy * dy);
      ++total;
      for (std::size_t k = 0; k < kDeltaThresholds.size(); ++k) {
        if (d < kDeltaThresholds[k]) ++hits[k];
      }
    }
  }
  if (total == 0) throw MismatchedTracks("no visible ground-truth points to score");
  DeltaReport r;
  r.n_points = total;
  for (std::size_t k = 0; k < 5; ++k) {
    r.delta[k] = static_cast<double>(hits[k]) / static_cast<double>(total);
    r.delta_avg += r.delta[k];
  }
  r.delta_avg /= 5.0;
  return r;
}

QueryMode parse_query_mode(const std::string& s) {
  if (s == "first") return QueryMode::First;
  if (s == "strided") return QueryMode::Strided;
  throw BadConfig("mode: expected first or strided, got '" + s + "'");
}

std::string to_string(QueryMode m) { return m == QueryMode::First ? "first" : "strided"; }

std::vector<TrackQuery> make_queries(const TrackSet& gt, QueryMode mode, int stride) {
  std::vector<TrackQuery> out;
  for (const Track& t : gt.tracks) {
    for (std::size_t f = 0; f < t.points.size(); ++f) {
      if (mode == QueryMode::Strided && f % static_cast<std::size_t>(stride) != 0) continue;
      if (!t.points[f].visible) continue;
      out.push_back({t.id, static_cast<int>(f), {t.points[f].x, t.points[f].y}});
      if (mode == QueryMode::First) break;
    }
  }
  return out;
}

Tracker model_tracker(const ModelParams& params, const MatchOptions& opt) {
  return [&params, opt](const Clip& clip, std::span<const TrackQuery> q) {
    return track_points(params, clip, q, opt);
  };
}

EvalReport evaluate(const Tracker& tracker, std::span<const Clip> clips,
                    std::span<const std::string> names, QueryMode mode, double eval_resolution,
                    int threads) {
  EvalReport out;
  out.clips.resize(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    const Clip& clip = clips[i];
    if (!clip.tracks) throw MismatchedTracks("clip has no ground-truth tracks");
    const auto queries = make_queries(*clip.tracks, mode);
    const TrackSet pred = tracker(clip, queries);
    out.clips[i] = {i < names.size() ? names[i] : "clip_" + std::to_string(i), mode,
                    delta_metrics(pred, *clip.tracks, clip.width, clip.height, eval_resolution)};
  });
  if (out.clips.empty()) return out;
  for (const ClipReport& c : out.clips) {
    for (std::size_t k = 0; k < 5; ++k) out.aggregate.delta[k] += c.report.delta[k];
    out.aggregate.n_points += c.report.n_points;
  }
  const double n = static_cast<double>(out.clips.size());
  for (std::size_t k = 0; k < 5; ++k) {
    out.aggregate.delta[k] /= n;
    out.aggregate.delta_avg += out.aggregate.delta[k];
  }
  out.aggregate.delta_avg /= 5.0;
  return out;
}

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json report_json(const DeltaReport& r) {
  return {{"delta1", r.delta[0]}, {"delta2", r.delta[1]}, {"delta4", r.delta[2]},
          {"delta8", r.delta[3]}, {"delta16", r.delta[4]}, {"delta_avg", r.delta_avg},
          {"n_points", r.n_points}};
}

}  // namespace

void write_eval_report(const EvalReport& r, const std::filesystem::path& csv_path,
                       const std::filesystem::path& json_path) {
  std::ofstream csv(csv_path);
  csv << "clip,mode,delta1,delta2,delta4,delta8,delta16,delta_avg,n_points\n";
  for (const ClipReport& c : r.clips) {
    csv << c.clip << "," << to_string(c.mode);
    for (double d : c.report.delta) csv << "," << g17(d);
    csv << "," << g17(c.report.delta_avg) << "," << c.report.n_points << "\n";
  }
  nlohmann::json j;
  j["mode"] = r.clips.empty() ? "first" : to_string(r.clips.front().mode);
  j["clips"] = r.clips.size();
  j["aggregate"] = report_json(r.aggregate);
  std::ofstream(json_path) << j.dump(2) << "\n";
}

}  // namespace m2p
