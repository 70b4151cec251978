// Command-line entry point: gen, train, eval, track, gradcheck, viz.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "m2p/checkpoint.hpp"
#include "m2p/errors.hpp"
#include "m2p/eval.hpp"
#include "m2p/train.hpp"

namespace fs = std::filesystem;
using namespace m2p;

namespace {

enum class Verbosity { Quiet, Info, Debug };

Verbosity verbosity() {
  const char* v = std::getenv("M2P_LOG");
  if (v == nullptr) return Verbosity::Info;
  const std::string s = v;
  if (s == "debug") return Verbosity::Debug;
  if (s == "info") return Verbosity::Info;
  return Verbosity::Quiet;
}

void log_info(const std::string& msg) {
  if (verbosity() != Verbosity::Quiet) std::cerr << "[m2p] " << msg << "\n";
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : load_train_config(c.config);
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

TrackQuery parse_query(const std::string& text, int id) {
  std::stringstream ss(text);
  std::string part;
  std::vector<double> v;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw BadConfig("query: expected x,y,frame but got '" + text + "'");
    }
  }
  if (v.size() != 3) throw BadConfig("query: expected x,y,frame but got '" + text + "'");
  return {id, static_cast<int>(v[2]), {v[0], v[1]}};
}

// ---------------------------------------------------------------------------

int cmd_gen(const Common& c) {
  TrainConfig cfg = resolve_config(c);
  if (c.seed) cfg.corpus_seed = *c.seed;
  if (c.out.empty()) throw BadConfig("out: gen needs --out <dir>");
  fs::create_directories(c.out);
  const int total = cfg.train_clips + cfg.heldout_clips;
  for (int i = 0; i < total; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04d", i);
    write_clip(fs::path(c.out) / name, corpus_clip(cfg, i));
  }
  log_info("wrote " + std::to_string(total) + " clips to " + c.out);
  return 0;
}

int cmd_train(const Common& c, const std::string& corpus, const std::string& resume_path) {
  TrainConfig cfg = resolve_config(c);
  if (c.seed) cfg.seed = *c.seed;
  if (!corpus.empty()) cfg.corpus = corpus;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    cfg.checkpoint = (fs::path(c.out) / "checkpoint.m2p").string();
    cfg.log = (fs::path(c.out) / "train_log.csv").string();
  }
  cfg.validate();
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  log_info("training " + std::to_string(cfg.iterations) + " iterations, seed " + std::to_string(cfg.seed));

  const Corpus corpus_data = build_corpus(cfg);
  std::ofstream log(cfg.log, std::ios::trunc);
  if (!log) throw Error("cannot write log " + cfg.log);
  log << train_log_header() << "\n";
  const bool debug = verbosity() == Verbosity::Debug;
  const TrainResult res = train(cfg, corpus_data, resume ? &*resume : nullptr,
                                [&](const TrainLogRow& row, const ModelParams& p, const OptimState& o) {
                                  const std::string line = format_log_row(row);
                                  log << line << "\n";
                                  log.flush();
                                  if (debug || row.delta_avg) log_info(line);
                                  if (cfg.checkpoint_every > 0 &&
                                      (row.iter + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
                                    save_checkpoint(cfg.checkpoint, make_checkpoint(cfg, p, &o));
                                  }
                                });
  save_checkpoint(cfg.checkpoint, make_checkpoint(cfg, res.params, &res.optim));
  std::cout << "checkpoint " << cfg.checkpoint << "\nlog " << cfg.log << "\n";
  if (!res.log.rows.empty()) std::cout << "final_loss " << g17(res.log.rows.back().loss.l_total) << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& corpus,
             const std::string& mode_name) {
  TrainConfig cfg = resolve_config(c);
  const QueryMode mode = parse_query_mode(mode_name);
  if (checkpoint.empty()) throw BadConfig("checkpoint: eval needs --checkpoint <file>");
  const Checkpoint ck = load_checkpoint(checkpoint);
  std::vector<Clip> clips;
  std::vector<std::string> names;
  if (!corpus.empty()) {
    for (const fs::path& d : list_clips(corpus)) {
      clips.push_back(read_clip(d));
      names.push_back(d.filename().string());
    }
    if (clips.empty()) throw BadConfig("corpus: no clip_* directories in " + corpus);
  } else {
    Corpus built = build_corpus(cfg);
    clips = std::move(built.heldout);
    names = std::move(built.heldout_names);
    if (clips.empty()) throw BadConfig("heldout_clips: nothing to evaluate");
  }
  const EvalReport r = evaluate(model_tracker(ck.params, cfg.match_options()), clips, names, mode,
                                cfg.eval_resolution, cfg.threads);
  const fs::path out = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(out);
  write_eval_report(r, out / "eval.csv", out / "eval.json");
  std::cout << "mode " << to_string(mode) << "\n";
  const char* labels[] = {"delta1", "delta2", "delta4", "delta8", "delta16"};
  for (int k = 0; k < 5; ++k) std::cout << labels[k] << " " << g17(r.aggregate.delta[k]) << "\n";
  std::cout << "delta_avg " << g17(r.aggregate.delta_avg) << "\n";
  return 0;
}

int cmd_track(const Common& c, const std::string& checkpoint, const std::string& clip_dir,
              const std::vector<std::string>& queries) {
  TrainConfig cfg = resolve_config(c);
  if (checkpoint.empty()) throw BadConfig("checkpoint: track needs --checkpoint <file>");
  if (clip_dir.empty()) throw BadConfig("clip: track needs --clip <dir>");
  if (queries.empty()) throw BadConfig("query: track needs at least one --query x,y,frame");
  std::vector<TrackQuery> q;
  for (std::size_t i = 0; i < queries.size(); ++i) q.push_back(parse_query(queries[i], static_cast<int>(i)));
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Clip clip = read_clip(clip_dir);
  const TrackSet tracks = track_points(ck.params, clip, q, cfg.match_options());
  const fs::path out = c.out.empty() ? fs::path("tracks.csv")
                                     : (fs::path(c.out).has_extension() ? fs::path(c.out)
                                                                         : fs::path(c.out) / "tracks.csv");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_tracks_csv(out, tracks);
  std::cout << "tracks " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Common& c) {
  TrainConfig cfg = resolve_config(c);
  const std::uint64_t seed = c.seed.value_or(cfg.seed);
  const GradcheckReport r = gradcheck(cfg, seed);
  std::cout << "term,block,max_rel_error,max_abs_grad,checked,redrawn\n";
  for (const GradcheckEntry& e : r.entries) {
    std::cout << e.term << "," << e.block << "," << g17(e.max_rel_error) << "," << g17(e.max_abs_analytic) << ","
              << e.checked << "," << e.redrawn << "\n";
  }
  std::cout << "worst " << g17(r.worst) << "\n";
  return r.worst < 1e-4 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// SVG output

std::string rgb_hex(double r, double g, double b) {
  char buf[8];
  auto q = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", q(r), q(g), q(b));
  return buf;
}

// Blue-white-red ramp over [-1, 1].
std::string diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  if (v >= 0) return rgb_hex(1.0, 1.0 - v, 1.0 - v);
  return rgb_hex(1.0 + v, 1.0 + v, 1.0);
}

void svg_image(std::ostream& os, const Image& img, double x0, double y0, double scale) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      os << "<rect x=\"" << x0 + x * scale << "\" y=\"" << y0 + y * scale << "\" width=\"" << scale
         << "\" height=\"" << scale << "\" fill=\"" << rgb_hex(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2))
         << "\"/>\n";
    }
  }
}

int cmd_viz(const Common& c, const std::string& checkpoint, const std::string& clip_dir,
            const std::string& query_text, int target_frame) {
  TrainConfig cfg = resolve_config(c);
  if (checkpoint.empty()) throw BadConfig("checkpoint: viz needs --checkpoint <file>");
  if (clip_dir.empty()) throw BadConfig("clip: viz needs --clip <dir>");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Clip clip = read_clip(clip_dir);
  const int patch = ck.params.config.patch;
  TrackQuery q{0, 0, {0.5 * (clip.width - 1), 0.5 * (clip.height - 1)}};
  if (!query_text.empty()) q = parse_query(query_text, 0);
  if (target_frame < 0 || target_frame >= clip.num_frames()) {
    throw OutOfBounds("target frame " + std::to_string(target_frame) + " outside clip");
  }
  const TrackQuery one[] = {q};
  const TrackSet pred = track_points(ck.params, clip, one, cfg.match_options());  // validates the query

  const FeatureGrid src = forward(ck.params, clip.frames[q.frame]);
  const FeatureGrid dst = forward(ck.params, clip.frames[target_frame]);
  Point2 g = image_to_grid(q.position, patch);
  g.x = std::clamp(g.x, 0.0, src.width - 1.0);
  g.y = std::clamp(g.y, 0.0, src.height - 1.0);
  const ScalarMap corr = correlation_map(bilinear_feature(src, g), dst);

  const fs::path out = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(out);
  const double s = 4.0;
  const double panel = clip.width * s;
  {
    std::ofstream os(out / "correlation.svg");
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * panel + 30 << "\" height=\""
       << clip.height * s + 40 << "\">\n";
    os << "<text x=\"10\" y=\"16\" font-size=\"12\">query frame " << q.frame << "</text>\n";
    os << "<text x=\"" << panel + 30 << "\" y=\"16\" font-size=\"12\">correlation in frame " << target_frame
       << "</text>\n";
    os << "<g transform=\"translate(10,24)\">\n";
    svg_image(os, clip.frames[q.frame], 0, 0, s);
    os << "<circle cx=\"" << (q.position.x + 0.5) * s << "\" cy=\"" << (q.position.y + 0.5) * s
       << "\" r=\"6\" fill=\"none\" stroke=\"#00ff00\" stroke-width=\"2\"/>\n";
    os << "</g>\n<g transform=\"translate(" << panel + 20 << ",24)\">\n";
    const double cs = patch * s;
    for (int y = 0; y < corr.height; ++y) {
      for (int x = 0; x < corr.width; ++x) {
        os << "<rect x=\"" << x * cs << "\" y=\"" << y * cs << "\" width=\"" << cs << "\" height=\"" << cs
           << "\" fill=\"" << diverging(corr.at(y, x)) << "\"/>\n";
      }
    }
    const TrackPoint& p = pred.tracks[0].points[target_frame];
    os << "<circle cx=\"" << (p.x + 0.5) * s << "\" cy=\"" << (p.y + 0.5) * s
       << "\" r=\"6\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>\n";
    os << "</g>\n</svg>\n";
  }
  {
    // Track overlays: ground truth (green) against predictions (magenta)
    // for every ground-truth track queried at its first visible frame.
    std::ofstream os(out / "tracks.svg");
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel + 20 << "\" height=\""
       << clip.height * s + 20 << "\">\n<g transform=\"translate(10,10)\">\n";
    svg_image(os, clip.frames[0], 0, 0, s);
    auto polyline = [&](const Track& t, const char* color) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (const TrackPoint& p : t.points) {
        if (p.visible) os << (p.x + 0.5) * s << "," << (p.y + 0.5) * s << " ";
      }
      os << "\"/>\n";
    };
    if (clip.tracks) {
      const auto queries = make_queries(*clip.tracks, QueryMode::First);
      const TrackSet all = track_points(ck.params, clip, queries, cfg.match_options());
      for (const Track& t : clip.tracks->tracks) polyline(t, "#00c000");
      for (const Track& t : all.tracks) polyline(t, "#e000e0");
    } else {
      polyline(pred.tracks[0], "#e000e0");
    }
    os << "</g>\n</svg>\n";
  }
  std::cout << "wrote " << (out / "correlation.svg").string() << " and " << (out / "tracks.svg").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-to-point weakly supervised tracking lab"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, corpus, mode = "first", clip;
  std::vector<std::string> queries;
  int target_frame = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON configuration");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "seed override");
    sub->add_option("--threads", common.threads, "worker cap")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen", "write a synthetic corpus");
  add_common(gen);
  auto* tr = app.add_subcommand("train", "train and write checkpoint plus log");
  add_common(tr);
  tr->add_option("--corpus", corpus, "corpus directory (default: generate)");
  tr->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
  auto* ev = app.add_subcommand("eval", "delta metrics of a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");
  ev->add_option("--corpus", corpus, "corpus directory (default: generated held-out clips)");
  ev->add_option("--mode", mode, "first | strided");
  auto* tk = app.add_subcommand("track", "track query points through a clip");
  add_common(tk);
  tk->add_option("--checkpoint", checkpoint, "checkpoint file");
  tk->add_option("--clip", clip, "clip directory");
  tk->add_option("--query", queries, "x,y,frame (repeatable)");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gc);
  auto* vz = app.add_subcommand("viz", "SVG correlation heatmap and track overlays");
  add_common(vz);
  vz->add_option("--checkpoint", checkpoint, "checkpoint file");
  vz->add_option("--clip", clip, "clip directory");
  vz->add_option("--query", queries, "x,y,frame");
  vz->add_option("--target", target_frame, "frame for the heatmap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*tr) return cmd_train(common, corpus, checkpoint);
    if (*ev) return cmd_eval(common, checkpoint, corpus, mode);
    if (*tk) return cmd_track(common, checkpoint, clip, queries);
    if (*gc) return cmd_gradcheck(common);
    if (*vz) return cmd_viz(common, checkpoint, clip, queries.empty() ? "" : queries.front(), target_frame);
  } catch (const BadConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
