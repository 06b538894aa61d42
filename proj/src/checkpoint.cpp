#include "ensograph/checkpoint.hpp"

#include <fstream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ensograph/config_json.hpp"
#include "ensograph/cube_io.hpp"
#include "ensograph/errors.hpp"

namespace ensograph::stgnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json binding_to_json(const DataBinding& d) {
  return json{{"box", {d.box.lat_min, d.box.lat_max, d.box.lon_min, d.box.lon_max}},
              {"base_period", {d.base_period.first, d.base_period.last}},
              {"train_period", {d.train_period.first, d.train_period.last}},
              {"weighting", weighting_name(d.weighting)},
              {"k", d.k},
              {"leads", d.leads},
              {"node_lats", d.node_lats},
              {"node_lons", d.node_lons}};
}

DataBinding binding_from_json(const json& j) {
  DataBinding d;
  const auto box = j.at("box").get<std::vector<double>>();
  if (box.size() != 4) throw ValidationError("checkpoint box must have 4 numbers");
  d.box = {box[0], box[1], box[2], box[3]};
  const auto base = j.at("base_period").get<std::vector<int>>();
  const auto train = j.at("train_period").get<std::vector<int>>();
  if (base.size() != 2 || train.size() != 2) throw ValidationError("checkpoint periods must have 2 years");
  d.base_period = {base[0], base[1]};
  d.train_period = {train[0], train[1]};
  d.weighting = parse_weighting(j.at("weighting").get<std::string>());
  d.k = j.at("k").get<int>();
  d.leads = j.at("leads").get<std::vector<int>>();
  d.node_lats = j.at("node_lats").get<std::vector<double>>();
  d.node_lons = j.at("node_lons").get<std::vector<double>>();
  return d;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  json dir = json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    dir.push_back({{"name", ckpt.params.names[i]}, {"shape", ckpt.params.tensors[i].shape()}});
  }
  const json header{{"format_version", kCheckpointFormatVersion},
                    {"config", to_json(ckpt.config)},
                    {"input_scale", ckpt.params.input_scale},
                    {"seed", ckpt.seed},
                    {"data", binding_to_json(ckpt.data)},
                    {"tensors", dir}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write checkpoint {}", path.string()));
  out << header.dump() << '\n';
  for (const auto& t : ckpt.params.tensors) data::write_f32_le(out, t.data());
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

Checkpoint load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(fmt::format("{}: empty checkpoint", path.string()));

  Checkpoint ckpt;
  json dir;
  try {
    const json header = json::parse(line);
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ValidationError("unsupported checkpoint format_version");
    }
    update_from_json(ckpt.config, header.at("config"));
    ckpt.params.input_scale = header.at("input_scale").get<double>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.data = binding_from_json(header.at("data"));
    dir = header.at("tensors");
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: malformed checkpoint header: {}", path.string(), e.what()));
  }
  try {
    ckpt.config.validate();
  } catch (const UsageError& e) {
    throw ValidationError(fmt::format("{}: invalid model config: {}", path.string(), e.what()));
  }
  if (expected && !(*expected == ckpt.config)) {
    throw ValidationError(fmt::format("{}: model config differs from the expected one", path.string()));
  }

  // Names and shapes must be exactly what the config implies.
  ModelParams<float> layout = zero_params<float>(ckpt.config);
  if (dir.size() != layout.size()) {
    throw ValidationError(fmt::format("{}: {} tensors stored, config needs {}", path.string(), dir.size(),
                                      layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto name = dir[i].at("name").get<std::string>();
    const auto shape = dir[i].at("shape").get<adiff::Shape>();
    if (name != layout.names[i] || shape != layout.tensors[i].shape()) {
      throw ValidationError(fmt::format("{}: tensor {} is '{}' {}, expected '{}' {}", path.string(), i, name,
                                        adiff::to_string(shape), layout.names[i],
                                        adiff::to_string(layout.tensors[i].shape())));
    }
    data::read_f32_le(in, layout.tensors[i].data());
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError(fmt::format("{}: trailing bytes after the last tensor", path.string()));
  }
  layout.input_scale = ckpt.params.input_scale;
  ckpt.params = std::move(layout);
  return ckpt;
}

}  // namespace ensograph::stgnn
