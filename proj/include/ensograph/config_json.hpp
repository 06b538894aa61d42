#pragma once

#include <nlohmann/json.hpp>

#include "ensograph/data.hpp"
#include "ensograph/stgnn.hpp"

namespace ensograph {

// JSON mappings shared by checkpoints and manifests, also read from CLI config files.
// Readers accept partial objects; absent keys keep their defaults.

[[nodiscard]] nlohmann::json to_json(const stgnn::ModelConfig& c);
void update_from_json(stgnn::ModelConfig& c, const nlohmann::json& j);

[[nodiscard]] const char* weighting_name(data::Weighting w);
[[nodiscard]] data::Weighting parse_weighting(const std::string& name);

}  // namespace ensograph
