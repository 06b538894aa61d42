#include "ensograph/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "ensograph/errors.hpp"

namespace ensograph::data {

YearMonth YearMonth::from_ordinal(long ordinal) {
  long year = ordinal / 12;
  long rem = ordinal % 12;
  if (rem < 0) {
    rem += 12;
    --year;
  }
  return {static_cast<int>(year), static_cast<int>(rem) + 1};
}

void GridSpec::validate() const {
  if (lats.empty() || lons.empty()) {
    throw ValidationError("grid needs at least one latitude and one longitude");
  }
  for (std::size_t i = 0; i < lats.size(); ++i) {
    if (!(lats[i] >= -90.0 && lats[i] <= 90.0)) {
      throw ValidationError(fmt::format("latitude {} outside [-90, 90]", lats[i]));
    }
    if (i > 0 && !(lats[i] > lats[i - 1])) {
      throw ValidationError("latitudes must be strictly ascending");
    }
  }
  for (std::size_t j = 0; j < lons.size(); ++j) {
    if (!(lons[j] >= 0.0 && lons[j] < 360.0)) {
      throw ValidationError(fmt::format("longitude {} outside [0, 360)", lons[j]));
    }
    if (j > 0 && !(lons[j] > lons[j - 1])) {
      throw ValidationError("longitudes must be strictly ascending");
    }
  }
}

GridSpec GridSpec::regular(double lat0, double lat1, double lat_step, double lon0, double lon1,
                           double lon_step) {
  GridSpec grid;
  const auto n_lat = static_cast<long>(std::floor((lat1 - lat0) / lat_step + 1e-9)) + 1;
  const auto n_lon = static_cast<long>(std::floor((lon1 - lon0) / lon_step + 1e-9)) + 1;
  for (long i = 0; i < n_lat; ++i) grid.lats.push_back(lat0 + lat_step * static_cast<double>(i));
  for (long j = 0; j < n_lon; ++j) grid.lons.push_back(lon0 + lon_step * static_cast<double>(j));
  return grid;
}

namespace {

template <typename T>
void validate_field_shape(const Field<T>& field) {
  field.grid.validate();
  if (!field.start.valid()) {
    throw ValidationError(fmt::format("start month {} not in 1..12", field.start.month));
  }
  if (field.n_time < 1) throw ValidationError("time dimension is empty");
  const std::size_t expected = field.n_time * field.grid.n_cells();
  if (field.values.size() != expected || field.missing.size() != expected) {
    throw ValidationError(fmt::format("field holds {} values, expected {} ({} months x {} cells)",
                                      field.values.size(), expected, field.n_time,
                                      field.grid.n_cells()));
  }
}

template <typename Cube>
Cube split_impl(const Cube& cube, YearRange period) {
  if (period.first > period.last) {
    throw UsageError(fmt::format("empty year range {}:{}", period.first, period.last));
  }
  const long first = std::max(YearMonth{period.first, 1}.ordinal(), cube.start.ordinal());
  const long last =
      std::min(YearMonth{period.last, 12}.ordinal(), cube.end().ordinal());
  if (first > last) {
    throw ValidationError(fmt::format("period {}:{} does not intersect the data ({}-{:02} .. {}-{:02})",
                                      period.first, period.last, cube.start.year, cube.start.month,
                                      cube.end().year, cube.end().month));
  }
  Cube out = cube;
  out.start = YearMonth::from_ordinal(first);
  out.n_time = static_cast<std::size_t>(last - first + 1);
  const std::size_t cells = cube.grid.n_cells();
  const auto offset = static_cast<std::size_t>(first - cube.start.ordinal()) * cells;
  const std::size_t count = out.n_time * cells;
  out.values.assign(cube.values.begin() + static_cast<long>(offset),
                    cube.values.begin() + static_cast<long>(offset + count));
  out.missing.assign(cube.missing.begin() + static_cast<long>(offset),
                     cube.missing.begin() + static_cast<long>(offset + count));
  return out;
}

}  // namespace

void SstCube::validate() const {
  validate_field_shape(*this);
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (missing[n]) continue;
    const double v = values[n];
    const std::size_t cells = grid.n_cells();
    if (!std::isfinite(v)) {
      throw ValidationError(fmt::format("non-finite value at flat index {} (month {}) without missing flag",
                                        n, n / cells));
    }
    if (v < kMinPlausible || v > kMaxPlausible) {
      throw ValidationError(fmt::format("temperature {} degC at flat index {} (month {}) outside [{}, {}]",
                                        v, n, n / cells, kMinPlausible, kMaxPlausible));
    }
  }
}

void AnomalyCube::validate_shape() const { validate_field_shape(*this); }

void RegionBox::validate() const {
  if (!(lat_min <= lat_max)) throw UsageError("region lat_min must not exceed lat_max");
  if (!(lon_min <= lon_max)) throw UsageError("region lon_min must not exceed lon_max");
  if (lat_min < -90.0 || lat_max > 90.0) throw UsageError("region latitudes outside [-90, 90]");
  if (lon_min < 0.0 || lon_max >= 360.0) throw UsageError("region longitudes outside [0, 360)");
}

double canonical_longitude(double lon) {
  double out = std::fmod(lon, 360.0);
  if (out < 0.0) out += 360.0;
  return out;
}

Climatology climatology(const SstCube& cube, YearRange base) {
  if (base.first > base.last) {
    throw UsageError(fmt::format("empty base period {}:{}", base.first, base.last));
  }
  const std::size_t n_lat = cube.grid.n_lat();
  const std::size_t n_lon = cube.grid.n_lon();
  Climatology clim{cube.grid, base, std::vector<double>(12 * n_lat * n_lon, 0.0),
                   std::vector<std::uint8_t>(12 * n_lat * n_lon, 0)};
  std::vector<std::size_t> counts(clim.values.size(), 0);
  for (std::size_t t = 0; t < cube.n_time; ++t) {
    const YearMonth ym = cube.month_at(t);
    if (ym.year < base.first || ym.year > base.last) continue;
    for (std::size_t i = 0; i < n_lat; ++i) {
      for (std::size_t j = 0; j < n_lon; ++j) {
        if (cube.is_missing(t, i, j)) continue;
        const std::size_t c = clim.index(ym.month, i, j);
        clim.values[c] += cube.at(t, i, j);
        ++counts[c];
      }
    }
  }
  for (int m = 1; m <= 12; ++m) {
    bool any = false;
    for (std::size_t i = 0; i < n_lat; ++i) {
      for (std::size_t j = 0; j < n_lon; ++j) {
        const std::size_t c = clim.index(m, i, j);
        if (counts[c] == 0) {
          clim.missing[c] = 1;
          clim.values[c] = 0.0;
        } else {
          clim.values[c] /= static_cast<double>(counts[c]);
          any = true;
        }
      }
    }
    if (!any) {
      throw ValidationError(fmt::format("base period {}:{} has no data for calendar month {}",
                                        base.first, base.last, m));
    }
  }
  return clim;
}

AnomalyCube anomalies(const SstCube& cube, const Climatology& clim) {
  if (!(cube.grid == clim.grid)) throw ValidationError("cube and climatology grids differ");
  AnomalyCube out;
  out.grid = cube.grid;
  out.start = cube.start;
  out.n_time = cube.n_time;
  out.allocate();
  for (std::size_t t = 0; t < cube.n_time; ++t) {
    const int month = cube.month_at(t).month;
    for (std::size_t i = 0; i < cube.grid.n_lat(); ++i) {
      for (std::size_t j = 0; j < cube.grid.n_lon(); ++j) {
        const std::size_t n = cube.index(t, i, j);
        const std::size_t c = clim.index(month, i, j);
        if (cube.missing[n] || clim.missing[c]) {
          out.missing[n] = 1;
          continue;
        }
        out.values[n] = static_cast<double>(cube.values[n]) - clim.values[c];
      }
    }
  }
  return out;
}

std::vector<NodeId> region_nodes(const GridSpec& grid, const RegionBox& box) {
  box.validate();
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < grid.n_lat(); ++i) {
    const double lat = grid.lats[i];
    if (lat < box.lat_min || lat > box.lat_max) continue;
    for (std::size_t j = 0; j < grid.n_lon(); ++j) {
      const double lon = grid.lons[j];
      if (lon < box.lon_min || lon > box.lon_max) continue;
      nodes.push_back({i, j});
    }
  }
  if (nodes.empty()) {
    throw ValidationError(fmt::format("region lat {}..{} lon {}..{} contains no grid point",
                                      box.lat_min, box.lat_max, box.lon_min, box.lon_max));
  }
  return nodes;
}

std::vector<double> node_weights(const GridSpec& grid, std::span<const NodeId> nodes,
                                 Weighting weighting) {
  std::vector<double> w(nodes.size(), 1.0);
  if (weighting == Weighting::CosLat) {
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      w[n] = std::cos(grid.lats[nodes[n].lat] * std::numbers::pi / 180.0);
    }
  }
  return w;
}

MonthlySeries area_mean(const AnomalyCube& anoms, std::span<const NodeId> nodes,
                        Weighting weighting) {
  if (nodes.empty()) throw UsageError("area_mean needs at least one node");
  const std::vector<double> w = node_weights(anoms.grid, nodes, weighting);
  MonthlySeries out{anoms.start, std::vector<double>(anoms.n_time, 0.0)};
  for (std::size_t t = 0; t < anoms.n_time; ++t) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      if (anoms.is_missing(t, nodes[n].lat, nodes[n].lon)) continue;
      num += w[n] * anoms.at(t, nodes[n].lat, nodes[n].lon);
      den += w[n];
    }
    if (den <= 0.0) {
      const YearMonth ym = anoms.month_at(t);
      throw ValidationError(fmt::format("all region nodes missing (or zero weight) in {}-{:02}",
                                        ym.year, ym.month));
    }
    out.values[t] = num / den;
  }
  return out;
}

IndexSeries running_mean(const MonthlySeries& series, int k) {
  const auto n = static_cast<long>(series.values.size());
  if (k < 1) throw UsageError(fmt::format("running mean window k={} must be >= 1", k));
  if (k > n) {
    throw UsageError(fmt::format("running mean window k={} longer than series ({} months)", k, n));
  }
  IndexSeries out{series.start.plus(k / 2), std::vector<double>(static_cast<std::size_t>(n - k + 1)), k};
  for (std::size_t v = 0; v < out.values.size(); ++v) {
    double sum = 0.0;
    for (int q = 0; q < k; ++q) sum += series.values[v + static_cast<std::size_t>(q)];
    out.values[v] = sum / static_cast<double>(k);
  }
  return out;
}

IndexSeries oni(const AnomalyCube& anoms, const RegionBox& box, int k, Weighting weighting) {
  const std::vector<NodeId> nodes = region_nodes(anoms.grid, box);
  return running_mean(area_mean(anoms, nodes, weighting), k);
}

SampleSet make_samples(const AnomalyCube& anoms, std::span<const NodeId> nodes, int window,
                       int horizon) {
  if (window < 1 || horizon < 1) throw UsageError("window and horizon must be >= 1");
  const auto n_time = static_cast<long>(anoms.n_time);
  if (n_time < window + horizon) {
    throw ValidationError(fmt::format("{} months cannot hold a {}-month window plus {}-month horizon",
                                      n_time, window, horizon));
  }
  SampleSet set;
  set.nodes.assign(nodes.begin(), nodes.end());
  set.window = window;
  set.horizon = horizon;
  const std::size_t n_nodes = nodes.size();
  const long candidates = n_time - window - horizon + 1;
  for (long s = 0; s < candidates; ++s) {
    bool complete = true;
    for (long t = s; t < s + window + horizon && complete; ++t) {
      for (const NodeId& node : nodes) {
        if (anoms.is_missing(static_cast<std::size_t>(t), node.lat, node.lon)) {
          complete = false;
          break;
        }
      }
    }
    if (!complete) {
      ++set.dropped;
      continue;
    }
    for (long t = s; t < s + window + horizon; ++t) {
      auto& dest = t < s + window ? set.inputs : set.node_targets;
      for (std::size_t n = 0; n < n_nodes; ++n) {
        dest.push_back(anoms.at(static_cast<std::size_t>(t), nodes[n].lat, nodes[n].lon));
      }
    }
    set.sample_start.push_back(anoms.month_at(static_cast<std::size_t>(s)));
  }
  return set;
}

SstCube split_by_years(const SstCube& cube, YearRange period) { return split_impl(cube, period); }

AnomalyCube split_by_years(const AnomalyCube& cube, YearRange period) {
  return split_impl(cube, period);
}

YearRange parse_year_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw UsageError(fmt::format("period '{}' must look like Y0:Y1", text));
  }
  try {
    std::size_t used_a = 0;
    std::size_t used_b = 0;
    const std::string a = text.substr(0, colon);
    const std::string b = text.substr(colon + 1);
    YearRange range{std::stoi(a, &used_a), std::stoi(b, &used_b)};
    if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument("trailing");
    if (range.first > range.last) {
      throw UsageError(fmt::format("period '{}' has start after end", text));
    }
    return range;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError(fmt::format("period '{}' must look like Y0:Y1", text));
  }
}

}  // namespace ensograph::data
