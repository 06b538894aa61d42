#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ensograph::data {

/// Calendar month; months are the only time unit in the pipeline.
struct YearMonth {
  int year = 1970;
  int month = 1;  // 1..12

  /// Months since year 0, January.
  [[nodiscard]] long ordinal() const { return static_cast<long>(year) * 12 + (month - 1); }
  [[nodiscard]] static YearMonth from_ordinal(long ordinal);
  [[nodiscard]] YearMonth plus(long months) const { return from_ordinal(ordinal() + months); }
  [[nodiscard]] bool valid() const { return month >= 1 && month <= 12; }

  friend auto operator<=>(const YearMonth&, const YearMonth&) = default;
};

/// Inclusive range of calendar years, e.g. 1871..1973.
struct YearRange {
  int first = 0;
  int last = 0;
  friend bool operator==(const YearRange&, const YearRange&) = default;
};

struct GridSpec {
  std::vector<double> lats;  // degrees, strictly ascending in [-90, 90]
  std::vector<double> lons;  // degrees east, strictly ascending in [0, 360)

  [[nodiscard]] std::size_t n_lat() const { return lats.size(); }
  [[nodiscard]] std::size_t n_lon() const { return lons.size(); }
  [[nodiscard]] std::size_t n_cells() const { return lats.size() * lons.size(); }

  /// Throws ValidationError if any invariant is broken.
  void validate() const;

  /// Regular grid helper: lats lat0, lat0+step, ... up to lat1 (same for lons).
  [[nodiscard]] static GridSpec regular(double lat0, double lat1, double lat_step,
                                        double lon0, double lon1, double lon_step);

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Time x lat x lon field with a missing-value mask, stored time-major.
template <typename T>
struct Field {
  GridSpec grid;
  YearMonth start;
  std::size_t n_time = 0;
  std::vector<T> values;
  std::vector<std::uint8_t> missing;  // 1 = missing

  [[nodiscard]] std::size_t index(std::size_t t, std::size_t i, std::size_t j) const {
    return (t * grid.n_lat() + i) * grid.n_lon() + j;
  }
  [[nodiscard]] T at(std::size_t t, std::size_t i, std::size_t j) const { return values[index(t, i, j)]; }
  [[nodiscard]] bool is_missing(std::size_t t, std::size_t i, std::size_t j) const {
    return missing[index(t, i, j)] != 0;
  }
  [[nodiscard]] YearMonth month_at(std::size_t t) const { return start.plus(static_cast<long>(t)); }
  [[nodiscard]] YearMonth end() const { return month_at(n_time - 1); }

  /// Allocates values/mask for the current grid and n_time, all zero and present.
  void allocate() {
    values.assign(n_time * grid.n_cells(), T{});
    missing.assign(n_time * grid.n_cells(), 0);
  }
};

/// Absolute sea surface temperature in degC.
struct SstCube : Field<float> {
  static constexpr double kMinPlausible = -5.0;
  static constexpr double kMaxPlausible = 45.0;

  float missing_value = -999.0f;  // payload sentinel used on disk

  /// Shape and plausibility checks; throws ValidationError.
  void validate() const;
};

/// Temperature departures from a monthly climatology, degC.
struct AnomalyCube : Field<double> {
  void validate_shape() const;
};

struct Climatology {
  GridSpec grid;
  YearRange base;
  std::vector<double> values;  // [12][lat][lon], index 0 = January
  std::vector<std::uint8_t> missing;

  [[nodiscard]] std::size_t index(int month, std::size_t i, std::size_t j) const {
    return (static_cast<std::size_t>(month - 1) * grid.n_lat() + i) * grid.n_lon() + j;
  }
};

/// Inclusive lat/lon box; longitudes in degrees east.
struct RegionBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  void validate() const;

  /// 5S-5N, 120W-170W expressed as lon 190..240 east.
  [[nodiscard]] static RegionBox oni() { return {-5.0, 5.0, 190.0, 240.0}; }

  friend bool operator==(const RegionBox&, const RegionBox&) = default;
};

/// Maps any longitude (e.g. -170 for 170W) into [0, 360).
[[nodiscard]] double canonical_longitude(double lon);

struct NodeId {
  std::size_t lat = 0;
  std::size_t lon = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class Weighting { Uniform, CosLat };

/// Plain monthly series with a calendar anchor.
struct MonthlySeries {
  YearMonth start;
  std::vector<double> values;
};

/// Smoothed index; start is the label (center month) of values[0].
struct IndexSeries {
  YearMonth start;
  std::vector<double> values;
  int k = 1;

  [[nodiscard]] YearMonth month_at(std::size_t v) const { return start.plus(static_cast<long>(v)); }
};

/// Supervised (input window, node targets) pairs.
struct SampleSet {
  std::vector<NodeId> nodes;
  int window = 0;
  int horizon = 0;
  std::vector<double> inputs;        // [sample][window][node]
  std::vector<double> node_targets;  // [sample][horizon][node]
  std::vector<YearMonth> sample_start;
  std::size_t dropped = 0;  // samples excluded because of missing values

  [[nodiscard]] std::size_t size() const { return sample_start.size(); }
  [[nodiscard]] std::size_t n_nodes() const { return nodes.size(); }
  [[nodiscard]] std::span<const double> input(std::size_t s) const {
    const std::size_t len = static_cast<std::size_t>(window) * nodes.size();
    return {inputs.data() + s * len, len};
  }
  [[nodiscard]] std::span<const double> target(std::size_t s) const {
    const std::size_t len = static_cast<std::size_t>(horizon) * nodes.size();
    return {node_targets.data() + s * len, len};
  }
};

[[nodiscard]] Climatology climatology(const SstCube& cube, YearRange base);
[[nodiscard]] AnomalyCube anomalies(const SstCube& cube, const Climatology& clim);

/// Grid cells inside the box (inclusive), lat-major ascending.
[[nodiscard]] std::vector<NodeId> region_nodes(const GridSpec& grid, const RegionBox& box);

[[nodiscard]] std::vector<double> node_weights(const GridSpec& grid, std::span<const NodeId> nodes,
                                               Weighting weighting);

[[nodiscard]] MonthlySeries area_mean(const AnomalyCube& anoms, std::span<const NodeId> nodes,
                                      Weighting weighting);

/// Centered running mean: value v averages months [v, v+k-1], labeled at v + k/2.
[[nodiscard]] IndexSeries running_mean(const MonthlySeries& series, int k);

[[nodiscard]] IndexSeries oni(const AnomalyCube& anoms, const RegionBox& box, int k = 3,
                              Weighting weighting = Weighting::CosLat);

[[nodiscard]] SampleSet make_samples(const AnomalyCube& anoms, std::span<const NodeId> nodes,
                                     int window, int horizon);

[[nodiscard]] SstCube split_by_years(const SstCube& cube, YearRange period);
[[nodiscard]] AnomalyCube split_by_years(const AnomalyCube& cube, YearRange period);

/// Parses "Y0:Y1" (inclusive). Throws UsageError.
[[nodiscard]] YearRange parse_year_range(const std::string& text);

}  // namespace ensograph::data
