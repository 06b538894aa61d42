#include "ensograph/config_json.hpp"

#include <fmt/format.h>

#include "ensograph/errors.hpp"

namespace ensograph {

using nlohmann::json;

json to_json(const stgnn::ModelConfig& c) {
  return json{{"n_nodes", c.n_nodes},
              {"window", c.window},
              {"horizon", c.horizon},
              {"layers", c.layers},
              {"residual_channels", c.residual_channels},
              {"conv_channels", c.conv_channels},
              {"skip_channels", c.skip_channels},
              {"end_channels", c.end_channels},
              {"kernel_size", c.kernel_size},
              {"dilations", c.dilations},
              {"mixhop_depth", c.mixhop_depth},
              {"beta", c.beta},
              {"graph", {{"d", c.graph.d}, {"alpha", c.graph.alpha}, {"topk", c.graph.topk}}},
              {"seed", c.seed}};
}

namespace {

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("config field '{}' has the wrong type", key));
  }
}

}  // namespace

void update_from_json(stgnn::ModelConfig& c, const json& j) {
  if (!j.is_object()) throw UsageError("model config must be a JSON object");
  read(j, "n_nodes", c.n_nodes);
  read(j, "window", c.window);
  read(j, "horizon", c.horizon);
  read(j, "layers", c.layers);
  read(j, "residual_channels", c.residual_channels);
  read(j, "conv_channels", c.conv_channels);
  read(j, "skip_channels", c.skip_channels);
  read(j, "end_channels", c.end_channels);
  read(j, "kernel_size", c.kernel_size);
  read(j, "dilations", c.dilations);
  read(j, "mixhop_depth", c.mixhop_depth);
  read(j, "beta", c.beta);
  read(j, "seed", c.seed);
  if (j.contains("graph")) {
    const json& g = j.at("graph");
    read(g, "d", c.graph.d);
    read(g, "alpha", c.graph.alpha);
    read(g, "topk", c.graph.topk);
  }
}

const char* weighting_name(data::Weighting w) { return w == data::Weighting::CosLat ? "coslat" : "uniform"; }

data::Weighting parse_weighting(const std::string& name) {
  if (name == "coslat" || name == "cos-lat") return data::Weighting::CosLat;
  if (name == "uniform") return data::Weighting::Uniform;
  throw UsageError(fmt::format("unknown weighting '{}' (use coslat or uniform)", name));
}

}  // namespace ensograph
