#include "ensograph/synth.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "ensograph/errors.hpp"
#include "ensograph/rng.hpp"

namespace ensograph::synth {

namespace {
constexpr std::uint64_t kProcessStream = 1;
constexpr std::uint64_t kObservationStream = 2;
}  // namespace

data::GridSpec SynthConfig::default_grid() { return data::GridSpec::regular(-4.0, 4.0, 2.0, 190.0, 240.0, 2.0); }

void SynthConfig::validate() const {
  grid.validate();
  if (!start.valid()) throw UsageError("synthetic start month must be 1..12");
  if (months < 24) throw UsageError(fmt::format("synthetic run needs >= 24 months, got {}", months));
  if (!(period >= 4.0)) throw UsageError(fmt::format("oscillator period {} must be >= 4 months", period));
  if (!(damping >= 0.0 && damping < 1.0)) throw UsageError("damping ratio must lie in [0, 1)");
  if (!(process_noise >= 0.0) || !(observation_noise >= 0.0)) throw UsageError("noise levels must be >= 0");
}

SynthResult generate(const SynthConfig& config) {
  config.validate();
  const data::GridSpec& grid = config.grid;
  const std::size_t T = config.months;

  const double omega = 2.0 * std::numbers::pi / config.period;
  const double r = std::exp(-config.damping * omega / std::sqrt(1.0 - config.damping * config.damping));
  const double phi1 = 2.0 * r * std::cos(omega);
  const double phi2 = -r * r;

  Rng process = Rng::stream(config.seed, kProcessStream);
  std::vector<double> z(T);
  z[0] = 1.0;
  z[1] = r * std::cos(omega);
  for (std::size_t t = 2; t < T; ++t) {
    z[t] = phi1 * z[t - 1] + phi2 * z[t - 2] + config.process_noise * process.normal();
  }
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(T);
  for (double& v : z) v -= mean;

  // Gaussian bump centered in the grid, widths half the extent (at least one cell).
  const double lat_c = 0.5 * (grid.lats.front() + grid.lats.back());
  const double lon_c = 0.5 * (grid.lons.front() + grid.lons.back());
  const double lat_w = std::max(0.5 * (grid.lats.back() - grid.lats.front()), 1.0);
  const double lon_w = std::max(0.5 * (grid.lons.back() - grid.lons.front()), 1.0);
  std::vector<double> loading(grid.n_cells());
  for (std::size_t i = 0; i < grid.n_lat(); ++i) {
    for (std::size_t j = 0; j < grid.n_lon(); ++j) {
      const double dy = (grid.lats[i] - lat_c) / lat_w;
      const double dx = (grid.lons[j] - lon_c) / lon_w;
      loading[i * grid.n_lon() + j] = std::exp(-0.5 * (dx * dx + dy * dy));
    }
  }

  SynthResult result;
  result.anomalies.grid = grid;
  result.anomalies.start = config.start;
  result.anomalies.n_time = T;
  result.anomalies.allocate();
  Rng observation = Rng::stream(config.seed, kObservationStream);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < grid.n_cells(); ++c) {
      result.anomalies.values[t * grid.n_cells() + c] =
          loading[c] * z[t] + config.observation_noise * observation.normal();
    }
  }
  result.latent = {config.start, std::move(z)};
  result.loading = std::move(loading);
  return result;
}

data::SstCube to_sst(const data::AnomalyCube& anoms) {
  data::SstCube cube;
  cube.grid = anoms.grid;
  cube.start = anoms.start;
  cube.n_time = anoms.n_time;
  cube.allocate();
  const std::size_t cells = anoms.grid.n_cells();
  for (std::size_t t = 0; t < anoms.n_time; ++t) {
    const int month = anoms.month_at(t).month;
    const double seasonal = 26.0 + 1.5 * std::cos(2.0 * std::numbers::pi * (month - 3) / 12.0);
    for (std::size_t c = 0; c < cells; ++c) {
      const std::size_t n = t * cells + c;
      cube.missing[n] = anoms.missing[n];
      cube.values[n] = anoms.missing[n] ? 0.0f : static_cast<float>(seasonal + anoms.values[n]);
    }
  }
  return cube;
}

void write_latent_csv(std::ostream& out, const data::MonthlySeries& latent) {
  out << "year,month,latent\n";
  for (std::size_t t = 0; t < latent.values.size(); ++t) {
    const data::YearMonth ym = latent.start.plus(static_cast<long>(t));
    fmt::print(out, "{},{},{:.9g}\n", ym.year, ym.month, latent.values[t]);
  }
}

}  // namespace ensograph::synth
