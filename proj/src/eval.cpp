#include "ensograph/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "ensograph/errors.hpp"
#include "ensograph/train.hpp"

namespace ensograph::eval {

using data::YearMonth;

const SkillRow& SkillTable::at_lead(int lead) const {
  for (const auto& row : rows) {
    if (row.lead == lead) return row;
  }
  throw UsageError(fmt::format("skill table has no lead {}", lead));
}

Predictor model_predictor(const stgnn::ModelConfig& config, const stgnn::ModelParams<float>& params,
                          std::size_t batch_size) {
  return [config, params, batch_size](const data::SampleSet& samples) {
    std::vector<double> out;
    out.reserve(samples.size() * config.horizon * config.n_nodes);
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
      const std::size_t end = std::min(samples.size(), begin + batch_size);
      std::vector<std::size_t> ids(end - begin);
      std::iota(ids.begin(), ids.end(), begin);
      const auto pred = stgnn::forward(config, params, train::batch_inputs(samples, ids));
      out.insert(out.end(), pred.data().begin(), pred.data().end());
    }
    return out;
  };
}

Predictor oracle_predictor() {
  return [](const data::SampleSet& samples) { return samples.node_targets; };
}

std::vector<double> persistence_baseline(const data::IndexSeries& oni, int lead) {
  if (lead < 1) throw UsageError(fmt::format("persistence lead must be >= 1, got {}", lead));
  if (oni.values.size() <= static_cast<std::size_t>(lead)) {
    throw ValidationError(fmt::format("index of {} months too short for lead {}", oni.values.size(), lead));
  }
  return {oni.values.begin(), oni.values.end() - lead};
}

namespace {

std::optional<double> safe_pearson(std::span<const double> a, std::span<const double> b) {
  try {
    return pearson(a, b);
  } catch (const ValidationError&) {
    return std::nullopt;
  }
}

std::string format_r(const std::optional<double>& r) { return r ? fmt::format("{:.6f}", *r) : "nan"; }

}  // namespace

SkillReport skill_table(const Predictor& predictor, const data::AnomalyCube& test, const SkillSetup& setup) {
  if (setup.leads.empty()) throw UsageError("no leads requested");
  const int max_lead = *std::max_element(setup.leads.begin(), setup.leads.end());
  if (*std::min_element(setup.leads.begin(), setup.leads.end()) < 1) throw UsageError("leads must be >= 1");
  if (static_cast<std::size_t>(max_lead) + 1 > setup.horizon) {
    throw UsageError(fmt::format("horizon {} cannot score lead {} (needs horizon >= lead + 1)", setup.horizon,
                                 max_lead));
  }
  const auto w = static_cast<int>(setup.window);
  const auto H = static_cast<int>(setup.horizon);
  if (test.n_time < static_cast<std::size_t>(w + H)) {
    throw ValidationError(fmt::format("test period of {} months is too short for window {} + horizon {}",
                                      test.n_time, w, H));
  }

  const data::SampleSet samples = data::make_samples(test, setup.nodes, w, H);
  const std::vector<double> weights = data::node_weights(test.grid, setup.nodes, setup.weighting);
  const data::MonthlySeries area = data::area_mean(test, setup.nodes, setup.weighting);
  const data::IndexSeries observed = data::running_mean(area, setup.k);
  auto observed_at = [&](YearMonth ym) -> std::optional<double> {
    const long idx = ym.ordinal() - observed.start.ordinal();
    if (idx < 0 || idx >= static_cast<long>(observed.values.size())) return std::nullopt;
    return observed.values[static_cast<std::size_t>(idx)];
  };

  const std::vector<double> preds = predictor(samples);
  const std::size_t N = setup.nodes.size();
  if (preds.size() != samples.size() * setup.horizon * N) {
    throw ValidationError(fmt::format("predictor returned {} values, expected {}", preds.size(),
                                      samples.size() * setup.horizon * N));
  }

  SkillReport report;
  std::map<int, std::vector<const PredictionPair*>> by_lead;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const YearMonth issued = samples.sample_start[s].plus(w - 1);
    const auto persistence = observed_at(issued);
    if (!persistence) continue;
    const double last_observed = area.values[static_cast<std::size_t>(issued.ordinal() - area.start.ordinal())];
    const std::vector<double> index = stgnn::predict_oni(
        std::span<const double>(preds.data() + s * setup.horizon * N, setup.horizon * N), setup.horizon,
        last_observed, weights, setup.k);
    for (int lead : setup.leads) {
      const YearMonth target = issued.plus(lead);
      const auto obs = observed_at(target);
      if (!obs) continue;
      report.pairs.push_back({lead, issued, target, index[static_cast<std::size_t>(lead - 1)], *obs, *persistence});
    }
  }
  for (int lead : setup.leads) {
    std::vector<double> pred, obs, pers;
    for (const auto& p : report.pairs) {
      if (p.lead != lead) continue;
      pred.push_back(p.predicted);
      obs.push_back(p.observed);
      pers.push_back(p.persistence);
    }
    if (obs.empty()) throw ValidationError(fmt::format("no test samples can be verified at lead {}", lead));
    report.table.rows.push_back(
        {lead, safe_pearson(pred, obs), rmse(pred, obs), safe_pearson(pers, obs), rmse(pers, obs), obs.size()});
  }
  return report;
}

SkillReport skill_table(const stgnn::ModelConfig& config, const stgnn::ModelParams<float>& params,
                        const data::AnomalyCube& test, const SkillSetup& setup) {
  if (setup.nodes.size() != config.n_nodes) {
    throw ValidationError(fmt::format("test region has {} nodes, model expects {}", setup.nodes.size(),
                                      config.n_nodes));
  }
  if (setup.window != config.window || setup.horizon != config.horizon) {
    throw ValidationError("evaluation window/horizon differ from the model's");
  }
  return skill_table(model_predictor(config, params), test, setup);
}

std::vector<StratifiedRow> stratify_by_target_month(std::span<const PredictionPair> pairs) {
  std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& p : pairs) {
    auto& [pred, obs] = groups[{p.lead, p.target_month.month}];
    pred.push_back(p.predicted);
    obs.push_back(p.observed);
  }
  std::vector<StratifiedRow> rows;
  for (const auto& [key, series] : groups) {
    rows.push_back({key.first, key.second, safe_pearson(series.first, series.second),
                    rmse(series.first, series.second), series.first.size()});
  }
  return rows;
}

void write_skill_csv(std::ostream& out, const SkillTable& table) {
  out << "lead,model_r,model_rmse,persistence_r,persistence_rmse,n_samples\n";
  for (const auto& r : table.rows) {
    fmt::print(out, "{},{},{:.6f},{},{:.6f},{}\n", r.lead, format_r(r.model_r), r.model_rmse,
               format_r(r.persistence_r), r.persistence_rmse, r.n_samples);
  }
}

std::string format_skill_table(const SkillTable& table) {
  std::string out = fmt::format("{:>5} {:>10} {:>11} {:>14} {:>17} {:>10}\n", "lead", "model_r", "model_rmse",
                                "persistence_r", "persistence_rmse", "n_samples");
  for (const auto& r : table.rows) {
    out += fmt::format("{:>5} {:>10} {:>11.6f} {:>14} {:>17.6f} {:>10}\n", r.lead, format_r(r.model_r), r.model_rmse,
                       format_r(r.persistence_r), r.persistence_rmse, r.n_samples);
  }
  return out;
}

void write_pairs_csv(std::ostream& out, std::span<const PredictionPair> pairs) {
  out << "lead,issued_year,issued_month,target_year,target_month,predicted,observed,persistence\n";
  for (const auto& p : pairs) {
    fmt::print(out, "{},{},{},{},{},{:.6f},{:.6f},{:.6f}\n", p.lead, p.issued.year, p.issued.month,
               p.target_month.year, p.target_month.month, p.predicted, p.observed, p.persistence);
  }
}

void write_stratified_csv(std::ostream& out, std::span<const StratifiedRow> rows) {
  out << "lead,target_month,model_r,model_rmse,n_samples\n";
  for (const auto& r : rows) {
    fmt::print(out, "{},{},{},{:.6f},{}\n", r.lead, r.target_calendar_month, format_r(r.model_r), r.model_rmse,
               r.n_samples);
  }
}

std::vector<Event> classify_events(const data::IndexSeries& oni, double threshold, std::size_t min_run) {
  if (min_run < 1) throw UsageError("min_run must be >= 1");
  std::vector<Event> events;
  const std::size_t n = oni.values.size();
  std::size_t v = 0;
  while (v < n) {
    const double x = oni.values[v];
    if (x >= threshold || x <= -threshold) {
      const bool warm = x >= threshold;
      std::size_t end = v;
      while (end + 1 < n && (warm ? oni.values[end + 1] >= threshold : oni.values[end + 1] <= -threshold)) ++end;
      if (end - v + 1 >= min_run) {
        events.push_back({warm ? EventType::ElNino : EventType::LaNina, oni.month_at(v), oni.month_at(end)});
      }
      v = end + 1;
    } else {
      ++v;
    }
  }
  return events;
}

}  // namespace ensograph::eval
