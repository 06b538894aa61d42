#pragma once

// Checkpoint layout: one line of UTF-8 JSON (format_version, model config,
// input scale, seed, data binding, tensor directory), a newline, then every
// tensor as raw little-endian float32 in directory order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ensograph/data.hpp"
#include "ensograph/stgnn.hpp"

namespace ensograph::stgnn {

inline constexpr int kCheckpointFormatVersion = 1;

/// How the model's nodes and targets were derived from a cube.
struct DataBinding {
  data::RegionBox box = data::RegionBox::oni();
  data::YearRange base_period{1871, 1973};
  data::YearRange train_period{1871, 1973};
  data::Weighting weighting = data::Weighting::CosLat;
  int k = 3;
  std::vector<int> leads{1, 3, 6};
  std::vector<double> node_lats;  // coordinates of each node, model order
  std::vector<double> node_lons;

  friend bool operator==(const DataBinding&, const DataBinding&) = default;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  std::uint64_t seed = 0;
  DataBinding data;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws IoError / ValidationError; with `expected`, also rejects a differing config.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path,
                                         const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace ensograph::stgnn
