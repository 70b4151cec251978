#include "m2p/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "m2p/errors.hpp"
#include "m2p/eval.hpp"
#include "m2p/parallel.hpp"
#include "m2p/rng.hpp"
#include "m2p/sampling.hpp"

namespace m2p {

// ---------------------------------------------------------------------------
// Corpus

Clip corpus_clip(const TrainConfig& cfg, int index) {
  return gen_synthetic(cfg.synth, cfg.corpus_seed + static_cast<std::uint64_t>(index));
}

Corpus build_corpus(const TrainConfig& cfg) {
  const int total = cfg.train_clips + cfg.heldout_clips;
  std::vector<Clip> clips(static_cast<std::size_t>(total));
  std::vector<std::string> names(clips.size());
  if (cfg.corpus.empty()) {
    parallel_for(clips.size(), cfg.threads, [&](std::size_t i) {
      clips[i] = corpus_clip(cfg, static_cast<int>(i));
    });
    for (std::size_t i = 0; i < names.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "clip_%04zu", i);
      names[i] = buf;
    }
  } else {
    const auto dirs = list_clips(cfg.corpus);
    if (dirs.size() < clips.size()) {
      throw BadConfig("corpus: found " + std::to_string(dirs.size()) + " clips in " + cfg.corpus + ", need " +
                      std::to_string(total));
    }
    parallel_for(clips.size(), cfg.threads, [&](std::size_t i) { clips[i] = read_clip(dirs[i]); });
    for (std::size_t i = 0; i < names.size(); ++i) names[i] = dirs[i].filename().string();
  }
  for (const Clip& c : clips) {
    if (c.width % cfg.model.patch != 0 || c.height % cfg.model.patch != 0) {
      throw BadDims("clip size is not a multiple of the patch size");
    }
  }
  Corpus out;
  for (int i = 0; i < total; ++i) {
    auto& dst = i < cfg.train_clips ? out.train : out.heldout;
    auto& dst_names = i < cfg.train_clips ? out.train_names : out.heldout_names;
    dst.push_back(std::move(clips[i]));
    dst_names.push_back(names[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pair sampling

namespace {

struct Jitter {
  double cos_a = 1.0, sin_a = 0.0, scale = 1.0, tx = 0.0, ty = 0.0;
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
};

Jitter draw_jitter(const JitterConfig& j, Rng& rng) {
  Jitter out;
  const double a = rng.uniform(-1.0, 1.0) * j.max_rotation_deg * std::numbers::pi / 180.0;
  out.cos_a = std::cos(a);
  out.sin_a = std::sin(a);
  out.scale = 1.0 + rng.uniform(-1.0, 1.0) * j.max_scale;
  out.tx = rng.uniform(-1.0, 1.0) * j.max_shift;
  out.ty = rng.uniform(-1.0, 1.0) * j.max_shift;
  for (int c = 0; c < 3; ++c) {
    out.gain[c] = 1.0 + rng.uniform(-1.0, 1.0) * j.color;
    out.bias[c] = rng.uniform(-0.5, 0.5) * j.color;
  }
  return out;
}

// Source coordinate for output pixel (x, y): inverse of the similarity about
// the image centre.
Point2 jitter_source(const Jitter& jt, int w, int h, double x, double y) {
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  const double dx = (x - cx - jt.tx) / jt.scale;
  const double dy = (y - cy - jt.ty) / jt.scale;
  return {cx + jt.cos_a * dx + jt.sin_a * dy, cy - jt.sin_a * dx + jt.cos_a * dy};
}

Image warp_image(const Image& src, const Jitter& jt) {
  Image out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const Point2 s = jitter_source(jt, src.width, src.height, x, y);
      const double sx = std::clamp(s.x, 0.0, src.width - 1.0);
      const double sy = std::clamp(s.y, 0.0, src.height - 1.0);
      const int x0 = std::min(static_cast<int>(sx), src.width - 2 < 0 ? 0 : src.width - 2);
      const int y0 = std::min(static_cast<int>(sy), src.height - 2 < 0 ? 0 : src.height - 2);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const int y1 = std::min(y0 + 1, src.height - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * src.at(x0, y0, c) + fx * src.at(x1, y0, c)) +
                         fy * ((1 - fx) * src.at(x0, y1, c) + fx * src.at(x1, y1, c));
        out.at(x, y, c) = std::clamp(jt.gain[c] * v + jt.bias[c], 0.0, 1.0);
      }
    }
  }
  return out;
}

Mask warp_mask(const Mask& src, const Jitter& jt) {
  Mask out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const Point2 s = jitter_source(jt, src.width, src.height, x, y);
      const int sx = static_cast<int>(std::lround(s.x));
      const int sy = static_cast<int>(std::lround(s.y));
      if (src.contains(sx, sy) && src.at(sx, sy)) out.set(x, y, true);
    }
  }
  return out;
}

bool has_usable_object(const PairSample& p) {
  for (std::size_t k = 0; k < p.template_masks.size(); ++k) {
    if (p.template_masks[k].count() > 0 && p.target_masks[k].count() > 0) return true;
  }
  return false;
}

}  // namespace

PairSample make_pair(const Clip& clip, int template_frame, int target_frame, int patch,
                     std::uint64_t query_seed) {
  PairSample p;
  p.template_frame = template_frame;
  p.target_frame = target_frame;
  p.template_image = clip.frames.at(template_frame);
  p.target_image = clip.frames.at(target_frame);
  for (const Mask& m : clip.masks.at(template_frame)) p.template_masks.push_back(mask_to_grid(m, patch));
  for (const Mask& m : clip.masks.at(target_frame)) p.target_masks.push_back(mask_to_grid(m, patch));
  p.query_seed = query_seed;
  return p;
}

PairSample sample_pair(std::span<const Clip> clips, const TrainConfig& cfg, std::uint64_t iter,
                       std::size_t slot) {
  Rng rng({cfg.seed, iter, static_cast<std::uint64_t>(slot), 0x70616972ULL});
  for (int attempt = 0; attempt < 10; ++attempt) {
    const int ci = static_cast<int>(rng.below(clips.size()));
    const Clip& clip = clips[ci];
    const int nf = clip.num_frames();
    const int gap = std::min(cfg.max_gap, nf - 1);
    int t0 = 0;
    int t1 = gap < 1 ? 0 : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(gap)));
    if (cfg.symmetric_pairs && rng.uniform() < 0.5) std::swap(t0, t1);
    PairSample p;
    p.clip = ci;
    p.template_frame = t0;
    p.target_frame = t1;
    p.template_image = clip.frames[t0];
    p.query_seed = rng.next_u64();
    const int patch = cfg.model.patch;
    for (const Mask& m : clip.masks[t0]) p.template_masks.push_back(mask_to_grid(m, patch));
    if (cfg.jitter.enabled) {
      const Jitter jt = draw_jitter(cfg.jitter, rng);
      p.target_image = warp_image(clip.frames[t1], jt);
      for (const Mask& m : clip.masks[t1]) p.target_masks.push_back(mask_to_grid(warp_mask(m, jt), patch));
    } else {
      p.target_image = clip.frames[t1];
      for (const Mask& m : clip.masks[t1]) p.target_masks.push_back(mask_to_grid(m, patch));
    }
    if (has_usable_object(p)) return p;
  }
  throw NoForeground("no object visible on both frames after 10 draws (iteration " + std::to_string(iter) + ")");
}

// ---------------------------------------------------------------------------
// Per-pair loss

namespace {

std::uint64_t object_seed(std::uint64_t query_seed, std::size_t k) {
  return Rng({query_seed, static_cast<std::uint64_t>(k)}).next_u64();
}

void sign_bits(std::vector<std::int64_t>& sig, const std::vector<double>& v) {
  std::int64_t word = 0;
  int n = 0;
  for (double x : v) {
    word = (word << 1) | (x > 0.0 ? 1 : 0);
    if (++n == 62) {
      sig.push_back(word);
      word = 0;
      n = 0;
    }
  }
  sig.push_back(word);
}

int sgn(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

}  // namespace

PairOutcome train_step(const ModelParams& params, const PairSample& pair, const TrainConfig& cfg,
                       const ModelParams* proposer, bool with_grad, bool with_signature) {
  if (!has_usable_object(pair)) throw NoForeground("pair has no object visible on both frames");
  ExtractorCache c0, ct;
  const FeatureGrid f0 = forward(params, pair.template_image, &c0);
  const FeatureGrid ft = forward(params, pair.target_image, &ct);
  const NormalizedFeatures nt = normalize_features(ft);
  const RefinerWeights rw = params.refiner();
  const MatchOptions mo = cfg.match_options();

  FeatureGrid pf0;
  NormalizedFeatures pnt;
  RefinerWeights prw;
  if (proposer != nullptr) {
    pf0 = forward(*proposer, pair.template_image);
    pnt = normalize_features(forward(*proposer, pair.target_image));
    prw = proposer->refiner();
  }

  const bool any_lambda = cfg.lambdas[0] != 0.0 || cfg.lambdas[1] != 0.0 || cfg.lambdas[2] != 0.0;
  const bool backprop = with_grad && any_lambda;

  PairOutcome out;
  if (with_grad) out.grads.assign(params.values.size(), 0.0);
  FeatureGrid d0(f0.height, f0.width, f0.channels);
  FeatureGrid dt(ft.height, ft.width, ft.channels);
  const RefinerGrads rg = with_grad ? refiner_grads(params.config, out.grads) : RefinerGrads{};

  std::vector<std::size_t> objects;
  for (std::size_t k = 0; k < pair.template_masks.size(); ++k) {
    if (pair.template_masks[k].count() > 0 && pair.target_masks[k].count() > 0) objects.push_back(k);
  }
  const double wobj = 1.0 / static_cast<double>(objects.size());

  double l_lsc = 0.0, l_mlc = 0.0, l_mbc = 0.0;
  std::size_t supervised = 0, skipped = 0, active = 0, points = 0;
  const auto& lam = cfg.lambdas;

  for (std::size_t k : objects) {
    const Mask& m0 = pair.template_masks[k];
    const Mask& mt = pair.target_masks[k];
    const QueryGroupSet qs = sample_queries(m0, cfg.groups, cfg.points_per_group, object_seed(pair.query_seed, k));
    const std::size_t ng = qs.groups.size();

    std::vector<std::vector<QueryTrace>> traces(ng);
    GroupPredictions preds;
    preds.positions.resize(ng);
    preds.scores.resize(ng);
    GroupPredictions proposals;
    std::vector<double> mass;
    for (std::size_t g = 0; g < ng; ++g) {
      for (const Point2& q : qs.groups[g]) {
        traces[g].push_back(match_query(f0, nt, q, rw, mo));
        const QueryTrace& tr = traces[g].back();
        preds.positions[g].push_back(tr.pred.position);
        preds.scores[g].push_back(tr.pred.peak_score);
        mass.push_back(mask_mass(tr.pred.softmax_map, mt));
      }
    }
    if (proposer != nullptr) {
      proposals.positions.resize(ng);
      proposals.scores.resize(ng);
      for (std::size_t g = 0; g < ng; ++g) {
        for (const Point2& q : qs.groups[g]) {
          const QueryTrace tr = match_query(pf0, pnt, q, prw, mo);
          proposals.positions[g].push_back(tr.pred.position);
          proposals.scores[g].push_back(tr.pred.peak_score);
        }
      }
    }
    const GroupPredictions& prop = proposer != nullptr ? proposals : preds;

    LscOptions lo;
    lo.k_e = static_cast<std::size_t>(cfg.reliable_points);
    lo.huber_delta = cfg.huber_delta;
    // Targets from a frozen proposer carry no gradient regardless of the flag.
    lo.detach_targets = cfg.detach_pseudo_labels || proposer != nullptr;
    lo.grid_width = ft.width;
    lo.grid_height = ft.height;
    LscResult lsc;
    try {
      lsc = lsc_loss(qs, preds, prop, lo);
    } catch (const NoValidGroup&) {
      lsc = LscResult{};
      lsc.skipped_groups = ng;
      for (std::size_t g = 0; g < ng; ++g) {
        lsc.dpos.emplace_back(qs.groups[g].size(), Point2{});
        lsc.is_supervised.emplace_back(qs.groups[g].size(), false);
        lsc.targets.emplace_back(qs.groups[g].size(), Point2{});
      }
    }
    const MlcResult mlc = mlc_loss_from_mass(mass, cfg.tau, cfg.mlc_eps);
    const DistanceField df0 = distance_field(m0);
    const DistanceField dft = distance_field(mt);
    const MbcResult mbc = mbc_loss(qs, df0, preds.positions, dft, cfg.mbc_eps);

    l_lsc += wobj * lsc.loss;
    l_mlc += wobj * mlc.loss;
    l_mbc += wobj * mbc.loss;
    supervised += lsc.supervised;
    skipped += lsc.skipped_groups;
    active += mlc.active;
    points += mass.size();

    if (backprop) {
      std::size_t idx = 0;
      for (std::size_t g = 0; g < ng; ++g) {
        for (std::size_t i = 0; i < traces[g].size(); ++i, ++idx) {
          QueryUpstream up;
          up.dpos = wobj * (lam[0] * lsc.dpos[g][i] + lam[2] * mbc.dpos[g][i]);
          up.dmass = wobj * lam[1] * mlc.dmass[idx];
          up.mass = mass[idx];
          up.mask = &mt;
          match_query_backward(traces[g][i], f0, nt, rw, mo, up, d0, dt, rg);
        }
      }
    }

    if (with_signature) {
      auto& sig = out.signature;
      std::vector<double> d0v, dtv;
      for (std::size_t g = 0; g < ng; ++g) {
        for (const QueryTrace& tr : traces[g]) {
          sig.push_back(tr.pred.peak.x);
          sig.push_back(tr.pred.peak.y);
          sign_bits(sig, tr.cache.pre);
        }
        if (qs.groups[g].size() >= lo.k_e + 1) {
          for (std::size_t r : select_reliable(prop.scores[g], lo.k_e)) sig.push_back(static_cast<std::int64_t>(r));
        }
        for (std::size_t i = 0; i < qs.groups[g].size(); ++i) {
          const bool sup = lsc.is_supervised[g][i];
          sig.push_back(sup);
          if (sup) sig.push_back(norm(preds.positions[g][i] - lsc.targets[g][i]) <= cfg.huber_delta);
        }
        // Boundary-profile term: clamp flags, interpolation cell, sign of each difference.
        d0v.clear();
        dtv.clear();
        for (std::size_t i = 0; i < qs.groups[g].size(); ++i) {
          d0v.push_back(sample_distance(df0, qs.groups[g][i]).value);
          Point2 p = preds.positions[g][i];
          sig.push_back(p.x < 0.0 || p.x > dft.width - 1);
          sig.push_back(p.y < 0.0 || p.y > dft.height - 1);
          p.x = std::clamp(p.x, 0.0, dft.width - 1.0);
          p.y = std::clamp(p.y, 0.0, dft.height - 1.0);
          sig.push_back(static_cast<std::int64_t>(std::floor(p.x)));
          sig.push_back(static_cast<std::int64_t>(std::floor(p.y)));
          dtv.push_back(sample_distance(dft, p).value);
        }
        double s0 = cfg.mbc_eps, st = cfg.mbc_eps;
        for (double v : d0v) s0 += v;
        for (double v : dtv) st += v;
        for (std::size_t i = 0; i < d0v.size(); ++i) sig.push_back(sgn(d0v[i] / s0 - dtv[i] / st));
      }
      for (double m : mass) sig.push_back(m <= cfg.tau);
    }
  }

  if (with_signature) {
    sign_bits(out.signature, c0.hidden_pre);
    sign_bits(out.signature, ct.hidden_pre);
  }

  out.loss = total_loss(l_lsc, l_mlc, l_mbc, cfg.lambdas);
  out.loss.supervised_points = supervised;
  out.loss.skipped_groups = skipped;
  out.loss.mlc_active = active;
  out.loss.mlc_points = points;

  if (backprop && !cfg.freeze_extractor) {
    backward(params, c0, d0, out.grads);
    backward(params, ct, dt, out.grads);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

ParamGrads batch_gradient(const ModelParams& params, std::span<const PairSample> pairs,
                          const TrainConfig& cfg, const ModelParams* proposer,
                          std::vector<LossBreakdown>* losses) {
  std::vector<PairOutcome> outcomes(pairs.size());
  parallel_for(pairs.size(), cfg.threads,
               [&](std::size_t i) { outcomes[i] = train_step(params, pairs[i], cfg, proposer); });
  ParamGrads sum(params.values.size(), 0.0);
  for (const PairOutcome& o : outcomes) {
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += o.grads[j];
  }
  if (losses != nullptr) {
    losses->clear();
    for (const PairOutcome& o : outcomes) losses->push_back(o.loss);
  }
  return sum;
}

double probe_delta(const ModelParams& params, const Corpus& corpus, const TrainConfig& cfg) {
  const EvalReport r = evaluate(model_tracker(params, cfg.match_options()), corpus.heldout,
                                corpus.heldout_names, QueryMode::First, cfg.eval_resolution, cfg.threads);
  return r.aggregate.delta_avg;
}

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string train_log_header() {
  return "iter,l_lsc,l_mlc,l_mbc,l_total,delta_avg,skipped_groups,mlc_active_frac";
}

std::string format_log_row(const TrainLogRow& r) {
  std::string s = std::to_string(r.iter) + "," + g17(r.loss.l_lsc) + "," + g17(r.loss.l_mlc) + "," +
                  g17(r.loss.l_mbc) + "," + g17(r.loss.l_total) + ",";
  if (r.delta_avg) s += g17(*r.delta_avg);
  s += "," + std::to_string(r.skipped_groups) + "," + g17(r.mlc_active_frac);
  return s;
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log, bool append) {
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f) throw Error("cannot write log " + path.string());
  if (!append) f << train_log_header() << "\n";
  for (const TrainLogRow& r : log.rows) f << format_log_row(r) << "\n";
}

TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const Checkpoint* resume,
                  const TrainCallback& on_row) {
  cfg.validate();
  if (corpus.train.empty()) throw BadConfig("train_clips: corpus has no training clips");
  TrainResult res;
  res.params = resume != nullptr ? resume->params : init_params(cfg.seed, cfg.model);
  if (resume != nullptr && resume->optim) {
    res.optim = *resume->optim;
  } else {
    res.optim.m.assign(res.params.values.size(), 0.0);
    res.optim.v.assign(res.params.values.size(), 0.0);
  }
  const std::uint64_t start = resume != nullptr ? resume->step : 0;
  std::optional<ModelParams> frozen;
  if (cfg.proposer == "frozen_init") frozen = init_params(cfg.seed, cfg.model);
  const ModelParams* proposer = frozen ? &*frozen : nullptr;

  const auto t_start = std::chrono::steady_clock::now();
  const auto iters = static_cast<std::uint64_t>(cfg.iterations);
  for (std::uint64_t it = start; it < iters; ++it) {
    std::vector<PairSample> pairs(static_cast<std::size_t>(cfg.batch_size));
    parallel_for(pairs.size(), cfg.threads,
                 [&](std::size_t b) { pairs[b] = sample_pair(corpus.train, cfg, it, b); });
    std::vector<LossBreakdown> losses;
    const ParamGrads grads = batch_gradient(res.params, pairs, cfg, proposer, &losses);

    AdamWHyper hyper = cfg.optimizer;
    if (cfg.decay_step > 0 && it >= static_cast<std::uint64_t>(cfg.decay_step)) hyper.lr *= cfg.decay_factor;
    adamw_step(res.params, grads, res.optim, hyper);

    TrainLogRow row;
    row.iter = it;
    std::size_t active = 0, points = 0;
    const double inv = 1.0 / static_cast<double>(losses.size());
    for (const LossBreakdown& l : losses) {
      row.loss.l_lsc += l.l_lsc * inv;
      row.loss.l_mlc += l.l_mlc * inv;
      row.loss.l_mbc += l.l_mbc * inv;
      row.loss.l_total += l.l_total * inv;
      row.loss.supervised_points += l.supervised_points;
      row.skipped_groups += l.skipped_groups;
      active += l.mlc_active;
      points += l.mlc_points;
    }
    row.loss.skipped_groups = row.skipped_groups;
    row.loss.mlc_active = active;
    row.loss.mlc_points = points;
    row.mlc_active_frac = points == 0 ? 0.0 : static_cast<double>(active) / static_cast<double>(points);
    const bool probe = cfg.probe_every > 0 && !corpus.heldout.empty() &&
                       ((it + 1) % static_cast<std::uint64_t>(cfg.probe_every) == 0 || it + 1 == iters);
    if (probe) row.delta_avg = probe_delta(res.params, corpus, cfg);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (on_row) on_row(row, res.params, res.optim);
    res.log.rows.push_back(row);
  }
  return res;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const ModelParams& params, const OptimState* optim) {
  Checkpoint ck;
  ck.params = params;
  if (optim != nullptr) ck.optim = *optim;
  ck.seed = cfg.seed;
  ck.step = optim != nullptr ? optim->step : 0;
  ck.config = to_json(cfg);
  // Run-local settings do not affect the result and would make otherwise
  // identical checkpoints differ.
  ck.config.erase("threads");
  ck.config.erase("checkpoint");
  ck.config.erase("log");
  return ck;
}

TrainResult run_training(const TrainConfig& cfg, const Checkpoint* resume) {
  const Corpus corpus = build_corpus(cfg);
  std::ofstream log(cfg.log, std::ios::trunc);
  if (!log) throw Error("cannot write log " + cfg.log);
  log << train_log_header() << "\n";
  TrainResult res = train(cfg, corpus, resume, [&](const TrainLogRow& row, const ModelParams& p, const OptimState& o) {
    log << format_log_row(row) << "\n";
    log.flush();
    if (cfg.checkpoint_every > 0 && (row.iter + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
      save_checkpoint(cfg.checkpoint, make_checkpoint(cfg, p, &o));
    }
  });
  save_checkpoint(cfg.checkpoint, make_checkpoint(cfg, res.params, &res.optim));
  return res;
}

// ---------------------------------------------------------------------------
// Finite-difference check

GradcheckReport gradcheck(const TrainConfig& base, std::uint64_t seed, const GradcheckOptions& opt) {
  TrainConfig cfg = base;
  cfg.model.channels = opt.channels;
  cfg.groups = opt.groups;
  cfg.points_per_group = opt.points_per_group;
  cfg.reliable_points = std::min(cfg.reliable_points, opt.points_per_group - 1);
  cfg.tau = opt.tau;
  // The full derivative, including the path through the pseudo-labels, is
  // what finite differences see.
  cfg.detach_pseudo_labels = false;
  cfg.proposer = "live";
  cfg.threads = 1;

  SynthConfig sc;
  sc.width = sc.height = opt.image_size;
  sc.frames = 2;
  sc.min_objects = sc.max_objects = 1;
  sc.min_radius = 0.28 * opt.image_size;
  sc.max_radius = 0.32 * opt.image_size;
  sc.translation_step = 1.0;
  const Clip clip = gen_synthetic(sc, seed);
  const PairSample pair = make_pair(clip, 0, 1, cfg.model.patch, seed);
  const ModelParams params = init_params(seed, cfg.model);
  const auto layout = param_layout(cfg.model);

  GradcheckReport report;
  report.extractor_frozen = cfg.freeze_extractor;
  const std::array<std::pair<const char*, std::array<double, 3>>, 4> terms = {{
      {"lsc", {1.0, 0.0, 0.0}},
      {"mlc", {0.0, 1.0, 0.0}},
      {"mbc", {0.0, 0.0, 1.0}},
      {"total", base.lambdas},
  }};
  for (const auto& [name, lambdas] : terms) {
    cfg.lambdas = lambdas;
    const PairOutcome ref = train_step(params, pair, cfg, nullptr, true, true);
    ModelParams probe = params;
    std::vector<double> block_diff, block_num;
    const std::size_t first = report.entries.size();
    for (const ParamBlock& b : layout) {
      GradcheckEntry e;
      e.term = name;
      e.block = b.name;
      double max_diff = 0.0, max_num = 0.0;
      for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
        e.max_abs_analytic = std::max(e.max_abs_analytic, std::abs(ref.grads[i]));
        if (cfg.freeze_extractor && is_extractor_block(b.name)) continue;
        double h = opt.step;
        bool ok = false;
        double numeric = 0.0;
        // A perturbation that changes a discrete choice is redrawn with a
        // smaller step, and dropped if that does not help either.
        for (int attempt = 0; attempt < 3 && !ok; ++attempt, h *= 0.25) {
          probe.values[i] = params.values[i] + h;
          const PairOutcome plus = train_step(probe, pair, cfg, nullptr, false, true);
          probe.values[i] = params.values[i] - h;
          const PairOutcome minus = train_step(probe, pair, cfg, nullptr, false, true);
          probe.values[i] = params.values[i];
          if (plus.signature != ref.signature || minus.signature != ref.signature) {
            ++e.redrawn;
            continue;
          }
          numeric = (plus.loss.l_total - minus.loss.l_total) / (2.0 * h);
          ok = true;
        }
        if (!ok) continue;
        ++e.checked;
        max_diff = std::max(max_diff, std::abs(numeric - ref.grads[i]));
        max_num = std::max(max_num, std::abs(numeric));
      }
      block_diff.push_back(max_diff);
      block_num.push_back(max_num);
      report.entries.push_back(e);
    }
    // A block whose true gradient vanishes (the output bias of the refiner
    // cannot move a softmax) only shows finite-difference roundoff, so its
    // error is measured against the term's overall gradient scale.
    const double term_scale = *std::max_element(block_num.begin(), block_num.end());
    for (std::size_t k = 0; k < block_num.size(); ++k) {
      GradcheckEntry& e = report.entries[first + k];
      e.max_rel_error = block_diff[k] / std::max({block_num[k], 1e-3 * term_scale, 1e-6});
      report.worst = std::max(report.worst, e.max_rel_error);
    }
  }
  return report;
}

}  // namespace m2p
