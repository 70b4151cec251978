#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "m2p/geometry.hpp"
#include "m2p/maskops.hpp"
#include "m2p/model.hpp"

namespace m2p {

struct TrackPoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;
  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

struct Track {
  int id = 0;
  int object = 0;       // owning object, -1 when unknown
  int query_frame = -1;  // frame the prediction was queried from, -1 for ground truth
  std::vector<TrackPoint> points;  // one per frame
  friend bool operator==(const Track&, const Track&) = default;
};

struct TrackSet {
  std::vector<Track> tracks;
  friend bool operator==(const TrackSet&, const TrackSet&) = default;
};

/// Per-object similarity pose: image = s * R(theta) * canonical + (tx, ty).
struct ObjectPose {
  double s = 1.0;
  double theta = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  SimilarityTransform2D transform() const;
  friend bool operator==(const ObjectPose&, const ObjectPose&) = default;
};

struct SynthConfig {
  int width = 96;
  int height = 96;
  int frames = 16;
  // One large object by default: with several objects the visible masks get
  // fragmented by occlusion and boundary distances on the 24x24 grid stop
  // being comparable across frames. Up to 3 are supported.
  int min_objects = 1;
  int max_objects = 1;
  std::string motion = "random_walk";  // random_walk | translate | static
  double velocity_x = 2.0;             // translate mode, px/frame
  double velocity_y = 0.0;
  double scale_step = 0.03;      // random-walk step sizes per frame
  double rotation_step_deg = 3.0;
  double translation_step = 2.0;
  double min_scale = 0.7;
  double max_scale = 1.4;
  double max_rotation_deg = 30.0;
  double min_radius = 28.0;  // canonical object radius range, px
  double max_radius = 36.0;
  double deform = 0.0;       // amplitude (px) of a low-frequency warp
  double track_spacing = 5.0;

  /// Throws BadConfig.
  void validate() const;
};

struct Clip {
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;
  std::vector<Image> frames;
  std::vector<std::vector<Mask>> masks;        // [frame][object]
  std::vector<std::vector<ObjectPose>> poses;  // [frame][object], empty for loaded clips without poses
  std::optional<TrackSet> tracks;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int num_objects() const { return masks.empty() ? 0 : static_cast<int>(masks[0].size()); }
};

/// Renders a synthetic clip of textured objects under smooth similarity
/// motion, with per-frame masks and ground-truth tracks. Throws BadConfig.
Clip gen_synthetic(const SynthConfig& cfg, std::uint64_t seed);

/// Downsamples a mask by an integer factor; a cell is foreground iff at
/// least half of its pixels are. Throws BadDims.
Mask mask_to_grid(const Mask& m, int factor);

// --- cell-centre convention shared by every module -------------------------
// Grid cell (gx, gy) covers image pixels [gx*p, gx*p + p) and its centre sits
// at image coordinate gx*p + p/2 - 0.5.
Point2 grid_to_image(Point2 g, int patch);
Point2 image_to_grid(Point2 p, int patch);

// --- file IO ---------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const Mask& m);
Mask read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

void write_tracks_csv(const std::filesystem::path& path, const TrackSet& tracks);
TrackSet read_tracks_csv(const std::filesystem::path& path);

/// Clip directory: frame_%05d.ppm, mask_%05d_obj%02d.pgm, tracks.csv, clip.json.
void write_clip(const std::filesystem::path& dir, const Clip& clip);
Clip read_clip(const std::filesystem::path& dir);

/// Clip directories (clip_%04d) under `dir`, sorted by name.
std::vector<std::filesystem::path> list_clips(const std::filesystem::path& dir);

}  // namespace m2p
