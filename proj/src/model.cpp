#include "m2p/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "m2p/errors.hpp"
#include "m2p/rng.hpp"

namespace m2p {

std::vector<ParamBlock> param_layout(const ModelConfig& cfg) {
  const int c = cfg.channels;
  const int in = 3 * cfg.patch * cfg.patch;
  const int hid = cfg.refiner_hidden;
  std::vector<ParamBlock> blocks = {
      {"embed.weight", {c, in}},
      {"embed.bias", {c}},
      {"hidden.weight", {c, c}},
      {"hidden.bias", {c}},
      {"mix.weight", {c, c, 3, 3}},
      {"mix.bias", {c}},
      {"refiner.conv1.weight", {hid, 1, 3, 3}},
      {"refiner.conv1.bias", {hid}},
      {"refiner.conv2.weight", {1, hid, 3, 3}},
      {"refiner.conv2.bias", {1}},
  };
  std::size_t off = 0;
  for (ParamBlock& b : blocks) {
    std::size_t n = 1;
    for (int d : b.shape) n *= static_cast<std::size_t>(d);
    b.offset = off;
    b.size = n;
    off += n;
  }
  return blocks;
}

namespace {

const ParamBlock& find_block(const std::vector<ParamBlock>& layout, std::string_view name) {
  for (const ParamBlock& b : layout) {
    if (b.name == name) return b;
  }
  throw std::invalid_argument("unknown parameter block " + std::string(name));
}

}  // namespace

std::span<double> ModelParams::block(std::string_view name) {
  const ParamBlock b = find_block(param_layout(config), name);
  return {values.data() + b.offset, b.size};
}

std::span<const double> ModelParams::block(std::string_view name) const {
  const ParamBlock b = find_block(param_layout(config), name);
  return {values.data() + b.offset, b.size};
}

RefinerWeights ModelParams::refiner() const {
  return {config.refiner_hidden, block("refiner.conv1.weight"), block("refiner.conv1.bias"),
          block("refiner.conv2.weight"), block("refiner.conv2.bias")};
}

RefinerGrads refiner_grads(const ModelConfig& cfg, ParamGrads& g) {
  const auto layout = param_layout(cfg);
  auto span_of = [&](std::string_view n) {
    const ParamBlock& b = find_block(layout, n);
    return std::span<double>(g.data() + b.offset, b.size);
  };
  return {span_of("refiner.conv1.weight"), span_of("refiner.conv1.bias"),
          span_of("refiner.conv2.weight"), span_of("refiner.conv2.bias")};
}

bool is_extractor_block(const std::string& name) { return name.rfind("refiner.", 0) != 0; }

ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg) {
  if (cfg.patch < 1 || cfg.channels < 1 || cfg.refiner_hidden < 1) {
    throw BadConfig("model dimensions must be positive");
  }
  ModelParams p{cfg, {}};
  const auto layout = param_layout(cfg);
  p.values.assign(layout.back().offset + layout.back().size, 0.0);
  Rng rng({seed, 0x6d6f64656cULL});
  auto uniform_fill = [&](std::string_view name, int fan_in, double gain) {
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.block(name)) v = rng.uniform(-bound, bound);
  };
  const int c = cfg.channels;
  const int in = 3 * cfg.patch * cfg.patch;

  uniform_fill("embed.weight", in, 1.0);
  // Zero-sum embedding rows: a flat patch maps to the bias, so features
  // respond to texture rather than brightness.
  auto ew = p.block("embed.weight");
  for (int o = 0; o < c; ++o) {
    double mean = 0.0;
    for (int i = 0; i < in; ++i) mean += ew[o * in + i];
    mean /= in;
    for (int i = 0; i < in; ++i) ew[o * in + i] -= mean;
  }
  uniform_fill("embed.bias", in, 0.1);
  uniform_fill("hidden.weight", c, 1.0);
  uniform_fill("hidden.bias", c, 0.1);
  uniform_fill("mix.weight", 9 * c, 0.5);
  uniform_fill("mix.bias", 9 * c, 0.1);

  const int hid = cfg.refiner_hidden;
  uniform_fill("refiner.conv1.weight", 9, 0.1);
  uniform_fill("refiner.conv2.weight", 9 * hid, 0.1);
  auto w1 = p.block("refiner.conv1.weight");
  auto w2 = p.block("refiner.conv2.weight");
  for (int k = 0; k < hid; ++k) {
    w1[k * 9 + 4] += 1.0;
    w2[k * 9 + 4] += 1.0 / hid;
  }
  return p;
}

FeatureGrid forward(const ModelParams& params, const Image& image, ExtractorCache* cache) {
  const ModelConfig& cfg = params.config;
  const int p = cfg.patch;
  if (image.width % p != 0 || image.height % p != 0 || image.width == 0 || image.height == 0) {
    throw BadDims("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                  " is not a positive multiple of patch size " + std::to_string(p));
  }
  const int gh = image.height / p;
  const int gw = image.width / p;
  const int c = cfg.channels;
  const int in = 3 * p * p;
  const std::size_t cells = static_cast<std::size_t>(gh) * gw;

  const auto ew = params.block("embed.weight");
  const auto eb = params.block("embed.bias");
  const auto hw = params.block("hidden.weight");
  const auto hb = params.block("hidden.bias");
  const auto mw = params.block("mix.weight");
  const auto mb = params.block("mix.bias");

  std::vector<double> patches(cells * in);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      double* dst = patches.data() + (static_cast<std::size_t>(gy) * gw + gx) * in;
      for (int dy = 0; dy < p; ++dy) {
        for (int dx = 0; dx < p; ++dx) {
          for (int ch = 0; ch < 3; ++ch) *dst++ = image.at(gx * p + dx, gy * p + dy, ch);
        }
      }
    }
  }

  std::vector<double> embed(cells * c), hidden_pre(cells * c), u(cells * c);
  for (std::size_t i = 0; i < cells; ++i) {
    const double* x = patches.data() + i * in;
    double* e = embed.data() + i * c;
    for (int o = 0; o < c; ++o) {
      double s = eb[o] + cfg.feature_offset;
      const double* row = ew.data() + static_cast<std::size_t>(o) * in;
      for (int k = 0; k < in; ++k) s += row[k] * x[k];
      e[o] = s;
    }
    double* a = hidden_pre.data() + i * c;
    double* ui = u.data() + i * c;
    for (int o = 0; o < c; ++o) {
      double s = hb[o];
      const double* row = hw.data() + static_cast<std::size_t>(o) * c;
      for (int k = 0; k < c; ++k) s += row[k] * e[k];
      a[o] = s;
      ui[o] = e[o] + (s > 0.0 ? s : 0.0);
    }
  }

  // Spatial mix, weights re-laid as [tap][out][in].
  std::vector<double> wt(static_cast<std::size_t>(9) * c * c);
  for (int o = 0; o < c; ++o) {
    for (int i = 0; i < c; ++i) {
      for (int t = 0; t < 9; ++t) wt[(static_cast<std::size_t>(t) * c + o) * c + i] = mw[(static_cast<std::size_t>(o) * c + i) * 9 + t];
    }
  }
  FeatureGrid out(gh, gw, c);
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      double* f = out.values.data() + out.offset(y, x);
      const double* self = u.data() + (static_cast<std::size_t>(y) * gw + x) * c;
      for (int o = 0; o < c; ++o) f[o] = self[o] + mb[o];
      for (int t = 0; t < 9; ++t) {
        const int ny = (y + t / 3 - 1 + gh) % gh;
        const int nx = (x + t % 3 - 1 + gw) % gw;
        const double* nb = u.data() + (static_cast<std::size_t>(ny) * gw + nx) * c;
        const double* wrow = wt.data() + static_cast<std::size_t>(t) * c * c;
        for (int o = 0; o < c; ++o) {
          double s = 0.0;
          const double* w = wrow + static_cast<std::size_t>(o) * c;
          for (int i = 0; i < c; ++i) s += w[i] * nb[i];
          f[o] += s;
        }
      }
    }
  }

  if (cache != nullptr) {
    cache->patches = std::move(patches);
    cache->embed = std::move(embed);
    cache->hidden_pre = std::move(hidden_pre);
    cache->mixed_in = std::move(u);
  }
  return out;
}

void backward(const ModelParams& params, const ExtractorCache& cache, const FeatureGrid& dfeat,
              ParamGrads& grads) {
  const ModelConfig& cfg = params.config;
  const auto layout = param_layout(cfg);
  auto gblock = [&](std::string_view n) {
    const ParamBlock& b = find_block(layout, n);
    return std::span<double>(grads.data() + b.offset, b.size);
  };
  const int c = cfg.channels;
  const int in = 3 * cfg.patch * cfg.patch;
  const int gh = dfeat.height;
  const int gw = dfeat.width;
  const std::size_t cells = dfeat.cells();

  const auto hw = params.block("hidden.weight");
  const auto mw = params.block("mix.weight");
  auto g_ew = gblock("embed.weight");
  auto g_eb = gblock("embed.bias");
  auto g_hw = gblock("hidden.weight");
  auto g_hb = gblock("hidden.bias");
  auto g_mw = gblock("mix.weight");
  auto g_mb = gblock("mix.bias");

  // Spatial mix: f = u + b + sum_t W_t u(shift_t).
  std::vector<double> du(dfeat.values);
  for (std::size_t i = 0; i < cells; ++i) {
    for (int o = 0; o < c; ++o) g_mb[o] += dfeat.values[i * c + o];
  }
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      const double* df = dfeat.values.data() + dfeat.offset(y, x);
      for (int t = 0; t < 9; ++t) {
        const int ny = (y + t / 3 - 1 + gh) % gh;
        const int nx = (x + t % 3 - 1 + gw) % gw;
        const std::size_t nbo = (static_cast<std::size_t>(ny) * gw + nx) * c;
        const double* nb = cache.mixed_in.data() + nbo;
        double* dnb = du.data() + nbo;
        for (int o = 0; o < c; ++o) {
          const double g = df[o];
          if (g == 0.0) continue;
          const std::size_t base = static_cast<std::size_t>(o) * c * 9 + t;
          for (int i = 0; i < c; ++i) {
            g_mw[base + static_cast<std::size_t>(i) * 9] += g * nb[i];
            dnb[i] += g * mw[base + static_cast<std::size_t>(i) * 9];
          }
        }
      }
    }
  }

  // u = e + relu(W_h e + b_h);  e = W_e x + b_e + offset.
  std::vector<double> de(c), da(c);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double* dui = du.data() + cell * c;
    const double* e = cache.embed.data() + cell * c;
    const double* a = cache.hidden_pre.data() + cell * c;
    const double* x = cache.patches.data() + cell * in;
    for (int o = 0; o < c; ++o) {
      da[o] = a[o] > 0.0 ? dui[o] : 0.0;
      de[o] = dui[o];
    }
    for (int o = 0; o < c; ++o) {
      if (da[o] == 0.0) continue;
      g_hb[o] += da[o];
      double* grow = g_hw.data() + static_cast<std::size_t>(o) * c;
      const double* wrow = hw.data() + static_cast<std::size_t>(o) * c;
      for (int k = 0; k < c; ++k) {
        grow[k] += da[o] * e[k];
        de[k] += da[o] * wrow[k];
      }
    }
    for (int o = 0; o < c; ++o) {
      g_eb[o] += de[o];
      double* grow = g_ew.data() + static_cast<std::size_t>(o) * in;
      for (int k = 0; k < in; ++k) grow[k] += de[o] * x[k];
    }
  }
}

void adamw_step(ModelParams& params, std::span<const double> grads, OptimState& state,
                const AdamWHyper& hyper) {
  const std::size_t n = params.values.size();
  if (grads.size() != n) throw DimMismatch("gradient size does not match parameters");
  if (state.m.size() != n) state.m.assign(n, 0.0);
  if (state.v.size() != n) state.v.assign(n, 0.0);
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    double& w = params.values[i];
    w *= 1.0 - hyper.lr * hyper.weight_decay;
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    w -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

}  // namespace m2p
