#include <fstream>
#include <set>

#include "m2p/errors.hpp"
#include "m2p/train.hpp"

namespace m2p {

namespace {

using nlohmann::json;

// Reads known keys of one JSON object and rejects everything else.
class Fields {
 public:
  Fields(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw BadConfig(where() + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string name = prefix_ + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw BadConfig(name + ": expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw BadConfig(name + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw BadConfig(name + ": expected an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
        throw BadConfig(name + ": must be non-negative");
      }
      out = v.get<T>();
    } else {
      if (!v.is_number()) throw BadConfig(name + ": expected a number");
      out = v.get<T>();
    }
  }

  template <typename Fn>
  void nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Fields sub(j_.at(key), prefix_ + key + ".");
    fn(sub);
    sub.finish();
  }

  void array3(const char* key, std::array<double, 3>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 3) throw BadConfig(prefix_ + key + ": expected 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw BadConfig(prefix_ + key + ": expected 3 numbers");
      out[i] = v[i].get<double>();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw BadConfig("unknown config key '" + prefix_ + it.key() + "'");
    }
  }

 private:
  std::string where() const { return prefix_.empty() ? "config" : prefix_.substr(0, prefix_.size() - 1); }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void read_synth(Fields& f, SynthConfig& s) {
  f.read("width", s.width);
  f.read("height", s.height);
  f.read("frames", s.frames);
  f.read("min_objects", s.min_objects);
  f.read("max_objects", s.max_objects);
  f.read("motion", s.motion);
  f.read("velocity_x", s.velocity_x);
  f.read("velocity_y", s.velocity_y);
  f.read("scale_step", s.scale_step);
  f.read("rotation_step_deg", s.rotation_step_deg);
  f.read("translation_step", s.translation_step);
  f.read("min_scale", s.min_scale);
  f.read("max_scale", s.max_scale);
  f.read("max_rotation_deg", s.max_rotation_deg);
  f.read("min_radius", s.min_radius);
  f.read("max_radius", s.max_radius);
  f.read("deform", s.deform);
  f.read("track_spacing", s.track_spacing);
}

json synth_json(const SynthConfig& s) {
  return {{"width", s.width},
          {"height", s.height},
          {"frames", s.frames},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"motion", s.motion},
          {"velocity_x", s.velocity_x},
          {"velocity_y", s.velocity_y},
          {"scale_step", s.scale_step},
          {"rotation_step_deg", s.rotation_step_deg},
          {"translation_step", s.translation_step},
          {"min_scale", s.min_scale},
          {"max_scale", s.max_scale},
          {"max_rotation_deg", s.max_rotation_deg},
          {"min_radius", s.min_radius},
          {"max_radius", s.max_radius},
          {"deform", s.deform},
          {"track_spacing", s.track_spacing}};
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw BadConfig(field + ": " + why); };
  if (corpus.empty()) synth.validate();
  if (train_clips < 1) fail("train_clips", "must be >= 1");
  if (heldout_clips < 0) fail("heldout_clips", "must be >= 0");
  if (iterations < 0) fail("iterations", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (groups < 1) fail("groups", "must be >= 1");
  if (points_per_group < 1) fail("points_per_group", "must be >= 1");
  if (reliable_points < 2) fail("reliable_points", "must be >= 2 (a similarity needs two points)");
  if (reliable_points >= points_per_group) fail("reliable_points", "must be < points_per_group");
  if (!(tau > 0.0 && tau <= 1.0)) fail("tau", "must be in (0, 1]");
  if (!(mlc_eps > 0.0)) fail("mlc_eps", "must be > 0");
  if (!(mbc_eps > 0.0)) fail("mbc_eps", "must be > 0");
  for (double l : lambdas) {
    if (!(l >= 0.0)) fail("lambdas", "weights must be >= 0");
  }
  if (!(huber_delta > 0.0)) fail("huber_delta", "must be > 0");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
  if (!(radius >= 0.0)) fail("radius", "must be >= 0");
  if (model.patch < 1) fail("model.patch", "must be >= 1");
  if (model.channels < 1) fail("model.channels", "must be >= 1");
  if (model.refiner_hidden < 1) fail("model.refiner_hidden", "must be >= 1");
  if (corpus.empty() && (synth.width % model.patch != 0 || synth.height % model.patch != 0)) {
    fail("model.patch", "must divide the synthetic frame size");
  }
  if (!(optimizer.lr > 0.0)) fail("optimizer.lr", "must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("optimizer.beta1", "must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("optimizer.beta2", "must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) fail("optimizer.eps", "must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) fail("optimizer.weight_decay", "must be >= 0");
  if (decay_step < 0) fail("decay_step", "must be >= 0");
  if (!(decay_factor > 0.0)) fail("decay_factor", "must be > 0");
  if (max_gap < 1) fail("max_gap", "must be >= 1");
  if (proposer != "live" && proposer != "frozen_init") fail("proposer", "expected live or frozen_init");
  if (probe_every < 0) fail("probe_every", "must be >= 0");
  if (threads < 1) fail("threads", "must be >= 1");
  if (!(eval_resolution > 0.0)) fail("eval_resolution", "must be > 0");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (jitter.max_shift < 0.0 || jitter.max_rotation_deg < 0.0 || jitter.color < 0.0) {
    fail("jitter", "magnitudes must be >= 0");
  }
  if (!(jitter.max_scale >= 0.0 && jitter.max_scale < 0.5)) fail("jitter.max_scale", "must be in [0, 0.5)");
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig s;
  Fields f(j, "synth.");
  read_synth(f, s);
  f.finish();
  s.validate();
  return s;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Fields f(j, "");
  f.read("corpus", c.corpus);
  f.nested("synth", [&](Fields& s) { read_synth(s, c.synth); });
  f.read("train_clips", c.train_clips);
  f.read("heldout_clips", c.heldout_clips);
  f.read("corpus_seed", c.corpus_seed);
  f.read("iterations", c.iterations);
  f.read("batch_size", c.batch_size);
  f.read("groups", c.groups);
  f.read("points_per_group", c.points_per_group);
  f.read("reliable_points", c.reliable_points);
  f.read("tau", c.tau);
  f.read("mlc_eps", c.mlc_eps);
  f.read("mbc_eps", c.mbc_eps);
  f.array3("lambdas", c.lambdas);
  f.read("huber_delta", c.huber_delta);
  f.read("temperature", c.temperature);
  f.read("radius", c.radius);
  f.nested("model", [&](Fields& m) {
    m.read("patch", c.model.patch);
    m.read("channels", c.model.channels);
    m.read("refiner_hidden", c.model.refiner_hidden);
    m.read("feature_offset", c.model.feature_offset);
  });
  f.nested("optimizer", [&](Fields& o) {
    o.read("lr", c.optimizer.lr);
    o.read("beta1", c.optimizer.beta1);
    o.read("beta2", c.optimizer.beta2);
    o.read("eps", c.optimizer.eps);
    o.read("weight_decay", c.optimizer.weight_decay);
  });
  f.read("decay_step", c.decay_step);
  f.read("decay_factor", c.decay_factor);
  f.read("seed", c.seed);
  f.read("checkpoint", c.checkpoint);
  f.read("log", c.log);
  f.read("max_gap", c.max_gap);
  f.read("symmetric_pairs", c.symmetric_pairs);
  f.nested("jitter", [&](Fields& s) {
    s.read("enabled", c.jitter.enabled);
    s.read("max_shift", c.jitter.max_shift);
    s.read("max_rotation_deg", c.jitter.max_rotation_deg);
    s.read("max_scale", c.jitter.max_scale);
    s.read("color", c.jitter.color);
  });
  f.read("detach_pseudo_labels", c.detach_pseudo_labels);
  f.read("proposer", c.proposer);
  f.read("freeze_extractor", c.freeze_extractor);
  f.read("probe_every", c.probe_every);
  f.read("threads", c.threads);
  f.read("eval_resolution", c.eval_resolution);
  f.read("checkpoint_every", c.checkpoint_every);
  f.finish();
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {
      {"corpus", c.corpus},
      {"synth", synth_json(c.synth)},
      {"train_clips", c.train_clips},
      {"heldout_clips", c.heldout_clips},
      {"corpus_seed", c.corpus_seed},
      {"iterations", c.iterations},
      {"batch_size", c.batch_size},
      {"groups", c.groups},
      {"points_per_group", c.points_per_group},
      {"reliable_points", c.reliable_points},
      {"tau", c.tau},
      {"mlc_eps", c.mlc_eps},
      {"mbc_eps", c.mbc_eps},
      {"lambdas", c.lambdas},
      {"huber_delta", c.huber_delta},
      {"temperature", c.temperature},
      {"radius", c.radius},
      {"model",
       {{"patch", c.model.patch},
        {"channels", c.model.channels},
        {"refiner_hidden", c.model.refiner_hidden},
        {"feature_offset", c.model.feature_offset}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"decay_step", c.decay_step},
      {"decay_factor", c.decay_factor},
      {"seed", c.seed},
      {"checkpoint", c.checkpoint},
      {"log", c.log},
      {"max_gap", c.max_gap},
      {"symmetric_pairs", c.symmetric_pairs},
      {"jitter",
       {{"enabled", c.jitter.enabled},
        {"max_shift", c.jitter.max_shift},
        {"max_rotation_deg", c.jitter.max_rotation_deg},
        {"max_scale", c.jitter.max_scale},
        {"color", c.jitter.color}}},
      {"detach_pseudo_labels", c.detach_pseudo_labels},
      {"proposer", c.proposer},
      {"freeze_extractor", c.freeze_extractor},
      {"probe_every", c.probe_every},
      {"threads", c.threads},
      {"eval_resolution", c.eval_resolution},
      {"checkpoint_every", c.checkpoint_every},
  };
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw BadConfig("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw BadConfig("config: " + std::string(e.what()));
  }
  return train_config_from_json(j);
}

}  // namespace m2p
