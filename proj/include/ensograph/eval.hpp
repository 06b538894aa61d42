#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensograph/data.hpp"
#include "ensograph/metrics.hpp"
#include "ensograph/stgnn.hpp"

namespace ensograph::eval {

struct SkillRow {
  int lead = 0;
  std::optional<double> model_r;  // nullopt when a series has zero variance
  double model_rmse = 0.0;
  std::optional<double> persistence_r;
  double persistence_rmse = 0.0;
  std::size_t n_samples = 0;
};

struct SkillTable {
  std::vector<SkillRow> rows;

  [[nodiscard]] const SkillRow& at_lead(int lead) const;
};

/// One verification pair; target_month is the label of the observed index.
struct PredictionPair {
  int lead = 0;
  data::YearMonth issued;  // last month of the input window
  data::YearMonth target_month;
  double predicted = 0.0;
  double observed = 0.0;
  double persistence = 0.0;
};

struct SkillReport {
  SkillTable table;
  std::vector<PredictionPair> pairs;
};

/// Returns node forecasts [sample][H][N] for every sample in the set.
using Predictor = std::function<std::vector<double>(const data::SampleSet&)>;

[[nodiscard]] Predictor model_predictor(const stgnn::ModelConfig& config, const stgnn::ModelParams<float>& params,
                                        std::size_t batch_size = 64);

/// Feeds the observed future back as the forecast.
[[nodiscard]] Predictor oracle_predictor();

/// Observed index at month t - lead, for targets t = start + lead ... end.
[[nodiscard]] std::vector<double> persistence_baseline(const data::IndexSeries& oni, int lead);

struct SkillSetup {
  std::vector<data::NodeId> nodes;
  data::Weighting weighting = data::Weighting::CosLat;
  std::size_t window = 3;
  std::size_t horizon = 7;
  std::vector<int> leads{1, 3, 6};
  int k = 3;
};

/// Runs the predictor over every complete test sample and scores the k=3
/// index forecast per lead against the observed index labeled at
/// (last input month + lead), alongside persistence.
[[nodiscard]] SkillReport skill_table(const Predictor& predictor, const data::AnomalyCube& test,
                                      const SkillSetup& setup);

[[nodiscard]] SkillReport skill_table(const stgnn::ModelConfig& config, const stgnn::ModelParams<float>& params,
                                      const data::AnomalyCube& test, const SkillSetup& setup);

/// Per-lead, per-target-calendar-month correlation of the pairs.
struct StratifiedRow {
  int lead = 0;
  int target_calendar_month = 1;
  std::optional<double> model_r;
  double model_rmse = 0.0;
  std::size_t n_samples = 0;
};
[[nodiscard]] std::vector<StratifiedRow> stratify_by_target_month(std::span<const PredictionPair> pairs);

void write_skill_csv(std::ostream& out, const SkillTable& table);
[[nodiscard]] std::string format_skill_table(const SkillTable& table);
void write_pairs_csv(std::ostream& out, std::span<const PredictionPair> pairs);
void write_stratified_csv(std::ostream& out, std::span<const StratifiedRow> rows);

enum class EventType { ElNino, LaNina };

struct Event {
  EventType type;
  data::YearMonth start;
  data::YearMonth end;
  friend bool operator==(const Event&, const Event&) = default;
};

/// Maximal runs of >= min_run values at or beyond +threshold (El Nino) or -threshold (La Nina).
[[nodiscard]] std::vector<Event> classify_events(const data::IndexSeries& oni, double threshold = 0.5,
                                                 std::size_t min_run = 5);

}  // namespace ensograph::eval
