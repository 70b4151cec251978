#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "m2p/checkpoint.hpp"
#include "m2p/data.hpp"
#include "m2p/losses.hpp"
#include "m2p/model.hpp"

namespace m2p {

/// Similarity jitter applied identically to the target frame and its masks,
/// plus a per-channel affine colour change on the target frame only.
struct JitterConfig {
  bool enabled = true;
  double max_shift = 2.0;         // px
  double max_rotation_deg = 5.0;
  double max_scale = 0.05;        // relative
  double color = 0.1;
};

struct TrainConfig {
  // data
  std::string corpus;  // directory of clip_* folders; empty means generate from `synth`
  SynthConfig synth;
  int train_clips = 20;
  int heldout_clips = 5;
  std::uint64_t corpus_seed = 1000;
  // schedule
  int iterations = 2000;
  int batch_size = 4;
  // sampling and losses
  int groups = 12;
  int points_per_group = 12;
  int reliable_points = 3;
  double tau = 0.5;
  double mlc_eps = 1e-8;
  double mbc_eps = 1e-6;
  std::array<double, 3> lambdas = kPaperLambdas;
  double huber_delta = 1.0;
  double temperature = 20.0;
  double radius = 3.0;
  // model and optimiser
  ModelConfig model;
  AdamWHyper optimizer;
  int decay_step = 0;  // 0 disables the single learning-rate drop
  double decay_factor = 0.1;
  // run
  std::uint64_t seed = 0;
  std::string checkpoint = "checkpoint.m2p";
  std::string log = "train_log.csv";
  int max_gap = 8;
  bool symmetric_pairs = false;
  JitterConfig jitter;
  bool detach_pseudo_labels = true;
  std::string proposer = "live";  // live | frozen_init
  bool freeze_extractor = false;
  int probe_every = 200;  // 0 disables the held-out probe
  int threads = 1;
  double eval_resolution = 256.0;
  int checkpoint_every = 0;

  /// Throws BadConfig naming the offending field.
  void validate() const;
  MatchOptions match_options() const { return {radius, temperature}; }
};

/// Strict parse: unknown keys and wrong types raise BadConfig naming the field.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);
/// Parses only the synthetic-generator block (used by `gen`).
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct Corpus {
  std::vector<Clip> train;
  std::vector<Clip> heldout;
  std::vector<std::string> train_names;
  std::vector<std::string> heldout_names;
};

/// Clip i of a generated corpus uses seed corpus_seed + i; the first
/// train_clips are for training and the next heldout_clips are held out.
Clip corpus_clip(const TrainConfig& cfg, int index);
/// Loads `corpus` when set, otherwise generates in memory.
Corpus build_corpus(const TrainConfig& cfg);

/// One template/target pair ready for the loss, masks at grid resolution.
struct PairSample {
  int clip = 0;
  int template_frame = 0;
  int target_frame = 0;
  Image template_image;
  Image target_image;
  std::vector<Mask> template_masks;
  std::vector<Mask> target_masks;
  std::uint64_t query_seed = 0;
};

/// Builds a pair from explicit frames (no jitter).
PairSample make_pair(const Clip& clip, int template_frame, int target_frame, int patch,
                     std::uint64_t query_seed);

/// Draws the pair for batch slot `slot` of iteration `iter`. Resamples up to
/// ten times when no object is visible on both grid masks, then throws
/// NoForeground.
PairSample sample_pair(std::span<const Clip> clips, const TrainConfig& cfg, std::uint64_t iter,
                       std::size_t slot);

struct PairOutcome {
  LossBreakdown loss;
  ParamGrads grads;  // empty when gradients were not requested
  /// Every discrete choice the loss made (argmax cells, reliable sets,
  /// active flags, ReLU patterns, ...); equal signatures mean the loss is
  /// smooth between the two evaluations.
  std::vector<std::int64_t> signature;
};

/// Per-pair loss and gradient averaged over objects. `proposer` supplies
/// the reliable-pair selection in frozen_init mode (null means live).
PairOutcome train_step(const ModelParams& params, const PairSample& pair, const TrainConfig& cfg,
                       const ModelParams* proposer, bool with_grad = true,
                       bool with_signature = false);

struct TrainLogRow {
  std::uint64_t iter = 0;
  LossBreakdown loss;  // batch means
  std::optional<double> delta_avg;
  std::size_t skipped_groups = 0;
  double mlc_active_frac = 0.0;
  double wall_seconds = 0.0;  // not written to the CSV
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
};

void write_train_log(const std::filesystem::path& path, const TrainLog& log, bool append = false);
std::string train_log_header();
std::string format_log_row(const TrainLogRow& row);

struct TrainResult {
  ModelParams params;
  OptimState optim;
  TrainLog log;
};

/// Sum of per-pair gradients over the batch, in slot order.
ParamGrads batch_gradient(const ModelParams& params, std::span<const PairSample> pairs,
                          const TrainConfig& cfg, const ModelParams* proposer,
                          std::vector<LossBreakdown>* losses = nullptr);

/// First-query delta_avg of `params` on the held-out clips.
double probe_delta(const ModelParams& params, const Corpus& corpus, const TrainConfig& cfg);

using TrainCallback =
    std::function<void(const TrainLogRow&, const ModelParams&, const OptimState&)>;

/// Runs iterations [resume.step, cfg.iterations). Writes nothing; see
/// run_training for the file-producing wrapper. `on_row` sees the state
/// after each update.
TrainResult train(const TrainConfig& cfg, const Corpus& corpus,
                  const Checkpoint* resume = nullptr, const TrainCallback& on_row = {});

Checkpoint make_checkpoint(const TrainConfig& cfg, const ModelParams& params,
                           const OptimState* optim);

/// Builds the corpus, trains, writes checkpoint and CSV log.
TrainResult run_training(const TrainConfig& cfg, const Checkpoint* resume = nullptr);

struct GradcheckEntry {
  std::string term;   // lsc | mlc | mbc | total
  std::string block;  // parameter block name
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
  std::size_t redrawn = 0;  // perturbations rejected because a discrete choice changed
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double worst = 0.0;
  bool extractor_frozen = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  int image_size = 32;  // 8x8 grid with patch 4
  int channels = 8;
  int groups = 2;
  int points_per_group = 6;
  /// Mask-label threshold for the check; high enough that the term is
  /// active on an untrained model.
  double tau = 0.95;
};

/// Central finite differences against the analytic gradient on a small
/// synthetic pair, for each loss term alone and for the weighted total.
/// Relative error per block is max|a - n| / max(max|n|, 1e-3 * S, 1e-6), where
/// S is the largest numeric gradient of that loss term over all blocks.
GradcheckReport gradcheck(const TrainConfig& cfg, std::uint64_t seed,
                          const GradcheckOptions& opt = {});

}  // namespace m2p
