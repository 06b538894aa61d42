#include "ensograph/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "ensograph/checkpoint.hpp"
#include "ensograph/config_json.hpp"
#include "ensograph/cube_io.hpp"
#include "ensograph/data.hpp"
#include "ensograph/errors.hpp"
#include "ensograph/eval.hpp"
#include "ensograph/graph.hpp"
#include "ensograph/stgnn.hpp"
#include "ensograph/synth.hpp"
#include "ensograph/train.hpp"

namespace ensograph::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  return out;
}

void finish_output(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

template <typename V>
void read_field(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("config field '{}' has the wrong type", key));
  }
}

data::RegionBox parse_box(const std::string& text) {
  data::RegionBox box;
  double* fields[] = {&box.lat_min, &box.lat_max, &box.lon_min, &box.lon_max};
  std::size_t pos = 0;
  for (std::size_t f = 0; f < 4; ++f) {
    const std::size_t colon = f < 3 ? text.find(':', pos) : text.size();
    if (colon == std::string::npos) throw UsageError(fmt::format("box '{}' must look like S:N:W:E", text));
    const std::string part = text.substr(pos, colon - pos);
    try {
      std::size_t used = 0;
      *fields[f] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError(fmt::format("box '{}' has a non-numeric field '{}'", text, part));
    }
    pos = colon + 1;
  }
  box.lon_min = data::canonical_longitude(box.lon_min);
  box.lon_max = data::canonical_longitude(box.lon_max);
  box.validate();
  return box;
}

data::YearRange full_years(const data::SstCube& cube) { return {cube.start.year, cube.end().year}; }

std::vector<data::NodeId> nodes_in(const data::GridSpec& grid, const data::RegionBox& box) {
  auto nodes = data::region_nodes(grid, box);
  if (nodes.empty()) {
    throw ValidationError(fmt::format("no grid cells inside box lat {}..{} lon {}..{}", box.lat_min, box.lat_max,
                                      box.lon_min, box.lon_max));
  }
  return nodes;
}

std::size_t horizon_for(const std::vector<int>& leads) {
  if (leads.empty()) throw UsageError("at least one lead is required");
  if (*std::min_element(leads.begin(), leads.end()) < 1) throw UsageError("leads must be >= 1");
  return static_cast<std::size_t>(*std::max_element(leads.begin(), leads.end())) + 1;
}

// Rejects a cube whose region does not match the nodes a checkpoint was trained on.
void check_binding(const stgnn::Checkpoint& ckpt, const data::GridSpec& grid, std::span<const data::NodeId> nodes) {
  if (nodes.size() != ckpt.config.n_nodes) {
    throw ValidationError(
        fmt::format("cube region has {} nodes, checkpoint expects {}", nodes.size(), ckpt.config.n_nodes));
  }
  if (ckpt.data.node_lats.size() != nodes.size()) return;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const double lat = grid.lats[nodes[n].lat];
    const double lon = grid.lons[nodes[n].lon];
    if (std::abs(lat - ckpt.data.node_lats[n]) > 1e-6 || std::abs(lon - ckpt.data.node_lons[n]) > 1e-6) {
      throw ValidationError(fmt::format("node {} is at ({}, {}) but the checkpoint expects ({}, {})", n, lat, lon,
                                        ckpt.data.node_lats[n], ckpt.data.node_lons[n]));
    }
  }
}

// ---- validate -------------------------------------------------------------

void add_validate(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("validate", "Check a cube against every format and range invariant");
  auto path = std::make_shared<std::string>();
  cmd->add_option("--data", *path, "Cube header (.json)")->required();
  cmd->callback([path, &out] {
    const data::SstCube cube = data::load_cube(*path);
    std::size_t missing = 0;
    for (auto m : cube.missing) missing += m;
    fmt::print(out, "cube: {}\n", *path);
    fmt::print(out, "grid: {} lats ({} .. {}) x {} lons ({} .. {}) = {} cells\n", cube.grid.n_lat(),
               cube.grid.lats.front(), cube.grid.lats.back(), cube.grid.n_lon(), cube.grid.lons.front(),
               cube.grid.lons.back(), cube.grid.n_cells());
    fmt::print(out, "period: {:04}-{:02} .. {:04}-{:02} ({} months)\n", cube.start.year, cube.start.month,
               cube.end().year, cube.end().month, cube.n_time);
    fmt::print(out, "missing: {} of {} values ({:.4f}%)\n", missing, cube.values.size(),
               100.0 * static_cast<double>(missing) / static_cast<double>(cube.values.size()));
    fmt::print(out, "status: ok\n");
  });
}

// ---- oni ------------------------------------------------------------------

struct OniOptions {
  std::string data;
  std::string base_period;
  int k = 3;
  std::string box;
  std::string weighting = "coslat";
  std::string out;
};

void add_oni(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("oni", "Compute the running-mean SST anomaly index over a box");
  auto o = std::make_shared<OniOptions>();
  cmd->add_option("--data", o->data, "Cube header (.json)")->required();
  cmd->add_option("--base-period", o->base_period, "Climatology years Y0:Y1 (default: whole cube)");
  cmd->add_option("--k", o->k, "Running-mean length in months (3 = ONI, 5 = Nino3.4 smoothing)")
      ->capture_default_str();
  cmd->add_option("--box", o->box, "Region S:N:W:E in degrees, longitudes east (default: -5:5:190:240)");
  cmd->add_option("--weighting", o->weighting, "Area weighting: coslat or uniform")->capture_default_str();
  cmd->add_option("--out", o->out, "Output CSV (year,month,oni); stdout when omitted");
  cmd->callback([o, &out] {
    if (o->k < 1) throw UsageError(fmt::format("--k must be >= 1, got {}", o->k));
    const data::Weighting weighting = parse_weighting(o->weighting);
    const data::RegionBox box = o->box.empty() ? data::RegionBox::oni() : parse_box(o->box);
    const data::SstCube cube = data::load_cube(o->data);
    const data::YearRange base = o->base_period.empty() ? full_years(cube) : data::parse_year_range(o->base_period);
    const data::AnomalyCube anoms = data::anomalies(cube, data::climatology(cube, base));
    nodes_in(cube.grid, box);
    const data::IndexSeries index = data::oni(anoms, box, o->k, weighting);

    auto write = [&](std::ostream& os) {
      os << "year,month,oni\n";
      for (std::size_t v = 0; v < index.values.size(); ++v) {
        const data::YearMonth ym = index.month_at(v);
        if (std::isnan(index.values[v])) {
          fmt::print(os, "{},{},nan\n", ym.year, ym.month);
        } else {
          fmt::print(os, "{},{},{:.6f}\n", ym.year, ym.month, index.values[v]);
        }
      }
    };
    if (o->out.empty()) {
      write(out);
    } else {
      auto file = open_output(o->out);
      write(file);
      finish_output(file, o->out);
      fmt::print(out, "wrote {} index values to {}\n", index.values.size(), o->out);
    }
  });
}

// ---- train ----------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string train_period = "1871:1973";
  std::string base_period;
  std::size_t window = 3;
  std::vector<int> leads{1, 3, 6};
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<double> validation_fraction;
  std::string box;
  std::string weighting = "coslat";
  int k = 3;
  std::string out;
  bool quiet = false;
};

void read_train_config(train::TrainConfig& t, const json& j) {
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  read_field(j, "lr", t.lr);
  read_field(j, "epochs", t.epochs);
  read_field(j, "batch_size", t.batch_size);
  read_field(j, "seed", t.seed);
  read_field(j, "clip_norm", t.clip_norm);
  read_field(j, "adam_beta1", t.beta1);
  read_field(j, "adam_beta2", t.beta2);
  read_field(j, "adam_eps", t.eps);
  read_field(j, "shuffle", t.shuffle);
  read_field(j, "validation_fraction", t.validation_fraction);
  if (j.contains("loss")) {
    std::string loss;
    read_field(j, "loss", loss);
    if (loss == "mae") {
      t.loss = train::Loss::Mae;
    } else if (loss == "mse") {
      t.loss = train::Loss::Mse;
    } else {
      throw UsageError(fmt::format("unknown loss '{}' (use mae or mse)", loss));
    }
  }
}

void add_train(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("train", "Train the graph forecaster on a cube and write a checkpoint");
  auto o = std::make_shared<TrainOptions>();
  cmd->add_option("--data", o->data, "Cube header (.json)")->required();
  cmd->add_option("--train-period", o->train_period, "Training years Y0:Y1")->capture_default_str();
  cmd->add_option("--base-period", o->base_period, "Climatology years Y0:Y1 (default: the training period)");
  cmd->add_option("--window", o->window, "Input months per sample")->capture_default_str();
  cmd->add_option("--leads", o->leads, "Comma-separated index leads; horizon = max lead + 1")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--config", o->config, "JSON file with optional \"model\" and \"train\" objects");
  cmd->add_option("--seed", o->seed, "Seed for initialization and shuffling (overrides the config file)");
  cmd->add_option("--epochs", o->epochs, "Training epochs (default 60)");
  cmd->add_option("--lr", o->lr, "Adam learning rate (default 1e-3)");
  cmd->add_option("--batch-size", o->batch_size, "Mini-batch size (default 32)");
  cmd->add_option("--validation-fraction", o->validation_fraction,
                  "Trailing share of samples held out for validation loss (default 0.1)");
  cmd->add_option("--box", o->box, "Node region S:N:W:E (default: -5:5:190:240)");
  cmd->add_option("--weighting", o->weighting, "Index area weighting: coslat or uniform")->capture_default_str();
  cmd->add_option("--k", o->k, "Index running-mean length stored for evaluation")->capture_default_str();
  cmd->add_option("--out", o->out, "Checkpoint path; the manifest goes to <out>.manifest.json")->required();
  cmd->add_flag("--quiet", o->quiet, "Suppress per-epoch lines");
  cmd->callback([o, &out] {
    stgnn::ModelConfig mc;
    train::TrainConfig tc;
    tc.validation_fraction = 0.1;
    if (!o->config.empty()) {
      const json j = read_json_file(o->config);
      if (!j.is_object()) throw UsageError("config file must hold a JSON object");
      if (j.contains("model")) update_from_json(mc, j.at("model"));
      if (j.contains("train")) read_train_config(tc, j.at("train"));
    }
    if (o->seed) {
      mc.seed = *o->seed;
      tc.seed = *o->seed;
    }
    if (o->epochs) tc.epochs = *o->epochs;
    if (o->lr) tc.lr = *o->lr;
    if (o->batch_size) tc.batch_size = *o->batch_size;
    if (o->validation_fraction) tc.validation_fraction = *o->validation_fraction;
    if (o->k < 1) throw UsageError(fmt::format("--k must be >= 1, got {}", o->k));

    stgnn::DataBinding binding;
    binding.box = o->box.empty() ? data::RegionBox::oni() : parse_box(o->box);
    binding.train_period = data::parse_year_range(o->train_period);
    binding.base_period = o->base_period.empty() ? binding.train_period : data::parse_year_range(o->base_period);
    binding.weighting = parse_weighting(o->weighting);
    binding.k = o->k;
    binding.leads = o->leads;

    mc.window = o->window;
    mc.horizon = horizon_for(o->leads);
    const data::SstCube cube = data::load_cube(o->data);
    const auto nodes = nodes_in(cube.grid, binding.box);
    mc.n_nodes = nodes.size();
    mc.validate();
    tc.validate();
    for (const auto& n : nodes) {
      binding.node_lats.push_back(cube.grid.lats[n.lat]);
      binding.node_lons.push_back(cube.grid.lons[n.lon]);
    }

    const data::AnomalyCube anoms =
        data::split_by_years(data::anomalies(cube, data::climatology(cube, binding.base_period)), binding.train_period);
    const data::SampleSet samples =
        data::make_samples(anoms, nodes, static_cast<int>(mc.window), static_cast<int>(mc.horizon));
    const auto n_val =
        static_cast<std::size_t>(std::floor(tc.validation_fraction * static_cast<double>(samples.size())));
    fmt::print(out, "{} samples ({} train, {} validation, {} dropped for missing values)\n", samples.size(),
               samples.size() - n_val, n_val, samples.dropped);
    fmt::print(out, "{} nodes, window {}, horizon {}, receptive field {}\n", mc.n_nodes, mc.window, mc.horizon,
               mc.receptive_field());

    const bool quiet = o->quiet;
    const train::TrainResult result =
        train::train(mc, tc, samples, [&out, quiet, &tc](std::size_t epoch, double loss, std::optional<double> val) {
          if (quiet) return;
          if (val) {
            fmt::print(out, "epoch {}/{} train_loss {:.6f} val_loss {:.6f}\n", epoch, tc.epochs, loss, *val);
          } else {
            fmt::print(out, "epoch {}/{} train_loss {:.6f}\n", epoch, tc.epochs, loss);
          }
          out.flush();
        });

    stgnn::save_checkpoint({mc, result.params, tc.seed, binding}, o->out);
    train::RunManifest manifest{mc, tc, binding, {o->data, data::payload_path(o->data)}, samples.size(),
                                samples.dropped, result.history};
    const std::string manifest_path = o->out + ".manifest.json";
    train::write_manifest(manifest, manifest_path);
    fmt::print(out, "trained {} steps in {:.1f} s; wrote {} and {}\n", result.history.steps, result.history.seconds,
               o->out, manifest_path);
  });
}

// ---- eval -----------------------------------------------------------------

struct EvalOptions {
  std::string data;
  std::string test_period = "1984:2020";
  std::string checkpoint;
  std::string out;
  std::string export_predictions;
  std::string stratified;
  std::vector<int> leads;
  bool oracle = false;
  std::string base_period;
  std::size_t window = 3;
  int k = 3;
  std::string box;
  std::string weighting = "coslat";
};

void add_eval(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("eval", "Score index forecasts on a test period against persistence");
  auto o = std::make_shared<EvalOptions>();
  cmd->add_option("--data", o->data, "Cube header (.json)")->required();
  cmd->add_option("--test-period", o->test_period, "Test years Y0:Y1")->capture_default_str();
  cmd->add_option("--checkpoint", o->checkpoint, "Trained checkpoint (required unless --oracle)");
  cmd->add_option("--out", o->out, "Skill table CSV");
  cmd->add_option("--export-predictions", o->export_predictions, "CSV of predicted vs observed index pairs");
  cmd->add_option("--stratified", o->stratified, "CSV of skill per lead and target calendar month");
  cmd->add_option("--leads", o->leads, "Leads to score (default: the checkpoint's)")->delimiter(',');
  cmd->add_flag("--oracle", o->oracle, "Use the observed future as the forecast (alignment check)");
  cmd->add_option("--base-period", o->base_period,
                  "Climatology years for --oracle without a checkpoint (default: whole cube)");
  cmd->add_option("--window", o->window, "Input months for --oracle without a checkpoint")->capture_default_str();
  cmd->add_option("--k", o->k, "Index running mean for --oracle without a checkpoint")->capture_default_str();
  cmd->add_option("--box", o->box, "Region for --oracle without a checkpoint (default: -5:5:190:240)");
  cmd->add_option("--weighting", o->weighting, "Weighting for --oracle without a checkpoint")->capture_default_str();
  cmd->callback([o, &out] {
    if (o->checkpoint.empty() && !o->oracle) throw UsageError("--checkpoint is required unless --oracle is given");
    const data::YearRange test_years = data::parse_year_range(o->test_period);

    std::optional<stgnn::Checkpoint> ckpt;
    stgnn::DataBinding binding;
    if (!o->checkpoint.empty()) {
      ckpt = stgnn::load_checkpoint(o->checkpoint);
      binding = ckpt->data;
    } else {
      if (o->k < 1) throw UsageError(fmt::format("--k must be >= 1, got {}", o->k));
      binding.box = o->box.empty() ? data::RegionBox::oni() : parse_box(o->box);
      binding.weighting = parse_weighting(o->weighting);
      binding.k = o->k;
    }
    if (!o->leads.empty()) binding.leads = o->leads;

    const data::SstCube cube = data::load_cube(o->data);
    if (!ckpt && o->base_period.empty()) binding.base_period = full_years(cube);
    if (!ckpt && !o->base_period.empty()) binding.base_period = data::parse_year_range(o->base_period);
    const auto nodes = nodes_in(cube.grid, binding.box);
    if (ckpt) check_binding(*ckpt, cube.grid, nodes);

    eval::SkillSetup setup;
    setup.nodes = nodes;
    setup.weighting = binding.weighting;
    setup.window = ckpt ? ckpt->config.window : o->window;
    setup.horizon = ckpt ? ckpt->config.horizon : horizon_for(binding.leads);
    setup.leads = binding.leads;
    setup.k = binding.k;
    horizon_for(setup.leads);

    const data::AnomalyCube test =
        data::split_by_years(data::anomalies(cube, data::climatology(cube, binding.base_period)), test_years);
    const eval::Predictor predictor =
        o->oracle ? eval::oracle_predictor() : eval::model_predictor(ckpt->config, ckpt->params);
    const eval::SkillReport report = eval::skill_table(predictor, test, setup);

    out << eval::format_skill_table(report.table);
    if (!o->out.empty()) {
      auto file = open_output(o->out);
      eval::write_skill_csv(file, report.table);
      finish_output(file, o->out);
    }
    if (!o->export_predictions.empty()) {
      auto file = open_output(o->export_predictions);
      eval::write_pairs_csv(file, report.pairs);
      finish_output(file, o->export_predictions);
    }
    if (!o->stratified.empty()) {
      auto file = open_output(o->stratified);
      eval::write_stratified_csv(file, eval::stratify_by_target_month(report.pairs));
      finish_output(file, o->stratified);
    }
  });
}

// ---- forecast -------------------------------------------------------------

void add_forecast(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("forecast", "Forecast the index from the last complete window of a cube");
  auto data_path = std::make_shared<std::string>();
  auto ckpt_path = std::make_shared<std::string>();
  auto out_path = std::make_shared<std::string>();
  cmd->add_option("--data", *data_path, "Cube header (.json)")->required();
  cmd->add_option("--checkpoint", *ckpt_path, "Trained checkpoint")->required();
  cmd->add_option("--out", *out_path, "Output CSV (lead,year,month,oni); stdout when omitted");
  cmd->callback([data_path, ckpt_path, out_path, &out] {
    const stgnn::Checkpoint ckpt = stgnn::load_checkpoint(*ckpt_path);
    const data::SstCube cube = data::load_cube(*data_path);
    const auto nodes = nodes_in(cube.grid, ckpt.data.box);
    check_binding(ckpt, cube.grid, nodes);
    const data::AnomalyCube anoms = data::anomalies(cube, data::climatology(cube, ckpt.data.base_period));

    const std::size_t w = ckpt.config.window;
    const std::size_t N = nodes.size();
    if (anoms.n_time < w) throw ValidationError(fmt::format("cube has fewer than {} months", w));
    const std::size_t t0 = anoms.n_time - w;
    adiff::Tensor<float> x(adiff::Shape{1, 1, N, w});
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t t = 0; t < w; ++t) {
        if (anoms.is_missing(t0 + t, nodes[n].lat, nodes[n].lon)) {
          throw ValidationError(fmt::format("missing value in the final {}-month window", w));
        }
        x.data()[n * w + t] = static_cast<float>(anoms.at(t0 + t, nodes[n].lat, nodes[n].lon));
      }
    }
    const adiff::Tensor<float> pred = stgnn::forward(ckpt.config, ckpt.params, x);
    const std::vector<double> node_preds(pred.data().begin(), pred.data().end());
    const std::vector<double> weights = data::node_weights(cube.grid, nodes, ckpt.data.weighting);
    const data::MonthlySeries area = data::area_mean(anoms, nodes, ckpt.data.weighting);
    const std::vector<double> index =
        stgnn::predict_oni(node_preds, ckpt.config.horizon, area.values.back(), weights, ckpt.data.k);

    const data::YearMonth issued = anoms.end();
    auto write = [&](std::ostream& os) {
      os << "lead,year,month,oni\n";
      for (std::size_t n = 0; n < index.size(); ++n) {
        const data::YearMonth target = issued.plus(static_cast<long>(n + 1));
        fmt::print(os, "{},{},{},{:.6f}\n", n + 1, target.year, target.month, index[n]);
      }
    };
    if (out_path->empty()) {
      write(out);
    } else {
      auto file = open_output(*out_path);
      write(file);
      finish_output(file, *out_path);
    }
  });
}

// ---- graph-export ---------------------------------------------------------

void add_graph_export(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("graph-export", "Write the learned adjacency (after top-k) as an edge table");
  auto ckpt_path = std::make_shared<std::string>();
  auto out_path = std::make_shared<std::string>();
  cmd->add_option("--checkpoint", *ckpt_path, "Trained checkpoint")->required();
  cmd->add_option("--out", *out_path, "Edge CSV (src_lat,src_lon,dst_lat,dst_lon,weight)")->required();
  cmd->callback([ckpt_path, out_path, &out] {
    const stgnn::Checkpoint ckpt = stgnn::load_checkpoint(*ckpt_path);
    const graph::Adjacency a = stgnn::learned_adjacency(ckpt.config, ckpt.params);
    const auto& lats = ckpt.data.node_lats;
    const auto& lons = ckpt.data.node_lons;
    if (lats.size() != a.n || lons.size() != a.n) {
      throw ValidationError("checkpoint does not record node coordinates");
    }
    // Rebuild a grid from the node coordinates so edges can be labeled.
    const std::set<double> lat_set(lats.begin(), lats.end());
    const std::set<double> lon_set(lons.begin(), lons.end());
    data::GridSpec grid{{lat_set.begin(), lat_set.end()}, {lon_set.begin(), lon_set.end()}};
    std::vector<data::NodeId> nodes;
    for (std::size_t n = 0; n < a.n; ++n) {
      nodes.push_back({static_cast<std::size_t>(std::distance(lat_set.begin(), lat_set.find(lats[n]))),
                       static_cast<std::size_t>(std::distance(lon_set.begin(), lon_set.find(lons[n])))});
    }
    graph::export_edges(a, grid, nodes, *out_path);
    fmt::print(out, "wrote {} edges to {}\n", a.nonzeros(), *out_path);
  });
}

// ---- synth ----------------------------------------------------------------

struct SynthOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> months;
  std::optional<double> period;
  std::optional<double> damping;
  std::optional<double> process_noise;
  std::optional<double> observation_noise;
  std::optional<int> start_year;
};

void read_synth_config(synth::SynthConfig& c, const json& j) {
  if (!j.is_object()) throw UsageError("synthetic config must be a JSON object");
  read_field(j, "months", c.months);
  read_field(j, "seed", c.seed);
  read_field(j, "period", c.period);
  read_field(j, "damping", c.damping);
  read_field(j, "process_noise", c.process_noise);
  read_field(j, "observation_noise", c.observation_noise);
  read_field(j, "start_year", c.start.year);
  read_field(j, "start_month", c.start.month);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    std::vector<double> lat{-4.0, 4.0, 2.0};
    std::vector<double> lon{190.0, 240.0, 2.0};
    read_field(g, "lat", lat);
    read_field(g, "lon", lon);
    if (lat.size() != 3 || lon.size() != 3) throw UsageError("grid.lat and grid.lon must be [first, last, step]");
    try {
      if (!(lat[2] > 0.0) || !(lon[2] > 0.0)) throw ValidationError("grid steps must be positive");
      c.grid = data::GridSpec::regular(lat[0], lat[1], lat[2], lon[0], lon[1], lon[2]);
      c.grid.validate();
    } catch (const ValidationError& e) {
      throw UsageError(fmt::format("bad synthetic grid: {}", e.what()));
    }
  }
}

void add_synth(CLI::App& app, std::ostream& out) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic oscillator cube with its latent series");
  auto o = std::make_shared<SynthOptions>();
  cmd->add_option("--config", o->config,
                  "JSON with any of months, seed, period, damping, process_noise, observation_noise, "
                  "start_year, start_month, grid {lat: [first,last,step], lon: [...]}");
  cmd->add_option("--out", o->out, "Output name; writes <name>.json, <name>.f32 and <name>.latent.csv")
      ->required();
  cmd->add_option("--seed", o->seed, "Random seed (default 0)");
  cmd->add_option("--months", o->months, "Months to generate, >= 24 (default 1200)");
  cmd->add_option("--period", o->period, "Oscillator period in months, >= 4 (default 48)");
  cmd->add_option("--damping", o->damping, "Damping ratio in [0, 1) (default 0.1)");
  cmd->add_option("--process-noise", o->process_noise, "Latent noise in degC (default 0.1)");
  cmd->add_option("--observation-noise", o->observation_noise, "Per-cell noise in degC (default 0.3)");
  cmd->add_option("--start-year", o->start_year, "First year, starting in January (default 1901)");
  cmd->callback([o, &out] {
    synth::SynthConfig c;
    if (!o->config.empty()) read_synth_config(c, read_json_file(o->config));
    if (o->seed) c.seed = *o->seed;
    if (o->months) c.months = *o->months;
    if (o->period) c.period = *o->period;
    if (o->damping) c.damping = *o->damping;
    if (o->process_noise) c.process_noise = *o->process_noise;
    if (o->observation_noise) c.observation_noise = *o->observation_noise;
    if (o->start_year) c.start = {*o->start_year, 1};
    c.validate();

    std::string base = o->out;
    if (base.size() > 5 && base.ends_with(".json")) base.resize(base.size() - 5);
    const fs::path meta = base + ".json";
    const fs::path latent_path = base + ".latent.csv";

    const synth::SynthResult result = synth::generate(c);
    data::save_cube(synth::to_sst(result.anomalies), meta);
    auto latent = open_output(latent_path);
    synth::write_latent_csv(latent, result.latent);
    finish_output(latent, latent_path);
    fmt::print(out, "wrote {} months on {} cells to {} and {}\n", c.months, c.grid.n_cells(), meta.string(),
               latent_path.string());
  });
}

}  // namespace

int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const ValidationError*>(&e)) return kValidation;
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const std::ios_base::failure*>(&e)) return kIo;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
  return kUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ensograph: graph neural network ENSO index forecasting"};
  app.name("ensograph");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(train::build_version()));
  add_validate(app, out);
  add_oni(app, out);
  add_train(app, out);
  add_eval(app, out);
  add_forecast(app, out);
  add_graph_export(app, out);
  add_synth(app, out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  } catch (const std::exception& e) {
    const int code = exit_code(e);
    fmt::print(err, "error: {}\n", e.what());
    return code;
  }
  return kSuccess;
}

}  // namespace ensograph::cli
