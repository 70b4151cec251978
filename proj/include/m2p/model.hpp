#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2p/grid.hpp"
#include "m2p/matching.hpp"

namespace m2p {

/// RGB image, row-major HWC, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

struct ModelConfig {
  int patch = 4;
  int channels = 32;
  int refiner_hidden = 16;
  /// Constant added to every patch embedding; keeps cell features away from
  /// zero norm at initialisation.
  double feature_offset = 0.1;
};

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Ordered parameter blocks for a configuration. The order is also the
/// checkpoint order.
std::vector<ParamBlock> param_layout(const ModelConfig& cfg);

/// All trainable weights in one flat vector; blocks follow param_layout().
struct ModelParams {
  ModelConfig config;
  std::vector<double> values;

  std::span<double> block(std::string_view name);
  std::span<const double> block(std::string_view name) const;
  RefinerWeights refiner() const;
};

/// Gradient buffer shaped like ModelParams::values.
using ParamGrads = std::vector<double>;

RefinerGrads refiner_grads(const ModelConfig& cfg, ParamGrads& g);
/// True for blocks that belong to the feature extractor (not the refiner).
bool is_extractor_block(const std::string& name);

/// Seeded fan-in uniform initialisation. The refiner starts near an
/// identity map (positive centre taps) so a fresh model ranks matches by raw
/// cosine similarity.
ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg);

struct ExtractorCache {
  std::vector<double> patches;   // cells x (3 p^2)
  std::vector<double> embed;     // cells x C
  std::vector<double> hidden_pre;  // cells x C
  std::vector<double> mixed_in;  // cells x C, input of the spatial mix
};

/// Patch embedding -> residual pointwise MLP -> residual 3x3 circular conv.
/// Throws BadDims when the image size is not a multiple of the patch size.
FeatureGrid forward(const ModelParams& params, const Image& image, ExtractorCache* cache = nullptr);

/// Accumulates dL/dparams for the extractor given dL/dfeatures.
void backward(const ModelParams& params, const ExtractorCache& cache, const FeatureGrid& dfeat,
              ParamGrads& grads);

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-7;
};

struct OptimState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// Decoupled weight decay followed by a bias-corrected Adam update.
void adamw_step(ModelParams& params, std::span<const double> grads, OptimState& state,
                const AdamWHyper& hyper);

}  // namespace m2p
