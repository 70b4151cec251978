#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "json.hpp"
#include "m2p/data.hpp"
#include "m2p/errors.hpp"

namespace fs = std::filesystem;

namespace m2p {

namespace {

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

struct NetpbmHeader {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

// Magic, width, height and maxval separated by whitespace (comments allowed
// before maxval); exactly one whitespace byte precedes the raster.
NetpbmHeader parse_header(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    throw ParseError(std::string("expected magic ") + magic, 0);
  }
  std::size_t pos = 2;
  auto next_token = [&](const char* what) {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1 << 24) throw ParseError(std::string(what) + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("expected ") + what, start);
    return std::pair<long, std::size_t>{value, start};
  };
  NetpbmHeader h;
  const auto [w, wpos] = next_token("width");
  const auto [ht, hpos] = next_token("height");
  const auto [maxval, mpos] = next_token("maxval");
  if (w <= 0) throw ParseError("width must be positive", wpos);
  if (ht <= 0) throw ParseError("height must be positive", hpos);
  if (maxval != 255) throw ParseError("only maxval 255 is supported", mpos);
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw ParseError("expected whitespace after maxval", pos);
  h.width = static_cast<int>(w);
  h.height = static_cast<int>(ht);
  h.data_offset = pos + 1;
  return h;
}

}  // namespace

void write_pgm(const fs::path& path, const Mask& m) {
  std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
  out.reserve(out.size() + m.bits.size());
  for (auto b : m.bits) out.push_back(static_cast<char>(b ? 255 : 0));
  write_all(path, out);
}

Mask read_pgm(const fs::path& path) {
  const std::string bytes = read_all(path);
  const NetpbmHeader h = parse_header(bytes, "P5");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() - h.data_offset < n) {
    throw ParseError("raster truncated: expected " + std::to_string(n) + " bytes", bytes.size());
  }
  Mask m(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    m.bits[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) >= 128 ? 1 : 0;
  }
  return m;
}

void write_ppm(const fs::path& path, const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.rgb.size());
  for (double v : img.rgb) {
    const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  write_all(path, out);
}

Image read_ppm(const fs::path& path) {
  const std::string bytes = read_all(path);
  const NetpbmHeader h = parse_header(bytes, "P6");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() - h.data_offset < n) {
    throw ParseError("raster truncated: expected " + std::to_string(n) + " bytes", bytes.size());
  }
  Image img(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    img.rgb[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) / 255.0;
  }
  return img;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_tracks_csv(const fs::path& path, const TrackSet& tracks) {
  std::string out = "track_id,frame,x,y,visible\n";
  for (const Track& t : tracks.tracks) {
    for (std::size_t f = 0; f < t.points.size(); ++f) {
      const TrackPoint& p = t.points[f];
      out += std::to_string(t.id) + "," + std::to_string(f) + "," + format_double(p.x) + "," +
             format_double(p.y) + "," + (p.visible ? "1" : "0") + "\n";
    }
  }
  write_all(path, out);
}

TrackSet read_tracks_csv(const fs::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    if (pos >= bytes.size()) return false;
    const std::size_t end = bytes.find('\n', pos);
    line = bytes.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    pos = end == std::string::npos ? bytes.size() : end + 1;
    return true;
  };
  std::string line;
  if (!next_line(line)) throw ParseError("empty tracks file", 0);
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* name : {"track_id", "frame", "x", "y", "visible"}) {
    if (!col.contains(name)) throw ParseError(std::string("missing column '") + name + "'", 0);
  }

  std::map<int, Track> by_id;
  std::vector<int> order;
  while (true) {
    const std::size_t line_start = pos;
    if (!next_line(line)) break;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields", line_start);
    }
    auto field = [&](const char* name) -> const std::string& { return fields[col[name]]; };
    int id = 0, frame = 0, vis = 0;
    double x = 0.0, y = 0.0;
    try {
      std::size_t used = 0;
      id = std::stoi(field("track_id"), &used);
      frame = std::stoi(field("frame"));
      x = std::stod(field("x"));
      y = std::stod(field("y"));
      vis = std::stoi(field("visible"));
    } catch (const std::exception&) {
      throw ParseError("malformed number in row", line_start);
    }
    if (frame < 0 || (vis != 0 && vis != 1) || !std::isfinite(x) || !std::isfinite(y)) {
      throw ParseError("invalid frame, coordinate or visible flag", line_start);
    }
    auto [it, inserted] = by_id.try_emplace(id);
    if (inserted) {
      it->second.id = id;
      it->second.object = -1;
      order.push_back(id);
    }
    auto& pts = it->second.points;
    if (pts.size() <= static_cast<std::size_t>(frame)) pts.resize(frame + 1);
    pts[frame] = {x, y, vis == 1};
  }
  TrackSet out;
  for (int id : order) out.tracks.push_back(std::move(by_id[id]));
  return out;
}

namespace {

std::string frame_name(int f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.ppm", f);
  return buf;
}

std::string mask_name(int f, int obj) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "mask_%05d_obj%02d.pgm", f, obj);
  return buf;
}

}  // namespace

void write_clip(const fs::path& dir, const Clip& clip) {
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["width"] = clip.width;
  meta["height"] = clip.height;
  meta["frames"] = clip.num_frames();
  meta["objects"] = clip.num_objects();
  meta["seed"] = clip.seed;
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& per_frame : clip.poses) {
    nlohmann::json row = nlohmann::json::array();
    for (const ObjectPose& p : per_frame) row.push_back({{"s", p.s}, {"theta", p.theta}, {"tx", p.tx}, {"ty", p.ty}});
    poses.push_back(row);
  }
  meta["poses"] = poses;
  if (clip.tracks) {
    nlohmann::json objs = nlohmann::json::array();
    for (const Track& t : clip.tracks->tracks) objs.push_back(t.object);
    meta["track_objects"] = objs;
    write_tracks_csv(dir / "tracks.csv", *clip.tracks);
  }
  for (int f = 0; f < clip.num_frames(); ++f) {
    write_ppm(dir / frame_name(f), clip.frames[f]);
    for (int k = 0; k < clip.num_objects(); ++k) write_pgm(dir / mask_name(f, k), clip.masks[f][k]);
  }
  std::ofstream(dir / "clip.json") << meta.dump(2) << "\n";
}

Clip read_clip(const fs::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_all(dir / "clip.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("clip.json: ") + e.what(), e.byte);
  }
  Clip clip;
  try {
    clip.width = meta.at("width").get<int>();
    clip.height = meta.at("height").get<int>();
    clip.seed = meta.value("seed", std::uint64_t{0});
    const int frames = meta.at("frames").get<int>();
    const int objects = meta.at("objects").get<int>();
    for (int f = 0; f < frames; ++f) {
      Image img = read_ppm(dir / frame_name(f));
      if (img.width != clip.width || img.height != clip.height) {
        throw DimMismatch(frame_name(f) + " does not match clip dimensions");
      }
      clip.frames.push_back(std::move(img));
      std::vector<Mask> masks;
      for (int k = 0; k < objects; ++k) {
        Mask m = read_pgm(dir / mask_name(f, k));
        if (m.width != clip.width || m.height != clip.height) {
          throw DimMismatch(mask_name(f, k) + " does not match clip dimensions");
        }
        masks.push_back(std::move(m));
      }
      clip.masks.push_back(std::move(masks));
    }
    if (meta.contains("poses")) {
      for (const auto& row : meta["poses"]) {
        std::vector<ObjectPose> per_frame;
        for (const auto& p : row) {
          per_frame.push_back({p.at("s").get<double>(), p.at("theta").get<double>(),
                               p.at("tx").get<double>(), p.at("ty").get<double>()});
        }
        clip.poses.push_back(std::move(per_frame));
      }
    }
    if (fs::exists(dir / "tracks.csv")) {
      TrackSet tracks = read_tracks_csv(dir / "tracks.csv");
      if (meta.contains("track_objects")) {
        const auto& objs = meta["track_objects"];
        if (objs.size() != tracks.tracks.size()) throw DimMismatch("track_objects length mismatch");
        for (std::size_t i = 0; i < objs.size(); ++i) tracks.tracks[i].object = objs[i].get<int>();
      }
      for (const Track& t : tracks.tracks) {
        if (t.points.size() != static_cast<std::size_t>(frames)) {
          throw DimMismatch("track " + std::to_string(t.id) + " does not cover every frame");
        }
      }
      clip.tracks = std::move(tracks);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("clip.json: ") + e.what(), 0);
  }
  return clip;
}

std::vector<fs::path> list_clips(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("clip_", 0) == 0) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace m2p
