#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "m2p/model.hpp"

namespace m2p {

struct Checkpoint {
  ModelParams params;
  std::optional<OptimState> optim;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  nlohmann::json config;  // training configuration, free-form
};

/// Layout: "M2PCKPT\n", u64 little-endian header length, JSON header
/// (model config, block names/shapes, seed, step, config), then float64
/// little-endian blobs in block order, followed by the AdamW first and
/// second moments when present.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);

/// Throws ParseError on malformed files and DimMismatch when blob shapes
/// disagree with the header.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m2p
