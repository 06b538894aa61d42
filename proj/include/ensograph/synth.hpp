#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "ensograph/data.hpp"

namespace ensograph::synth {

/// Damped stochastic oscillator projected onto a smooth spatial bump.
struct SynthConfig {
  data::GridSpec grid = default_grid();
  data::YearMonth start{1901, 1};
  std::size_t months = 1200;
  std::uint64_t seed = 0;
  double period = 48.0;          // months, P >= 4
  double damping = 0.1;          // damping ratio
  double process_noise = 0.1;    // degC per month
  double observation_noise = 0.3;  // degC per cell and month

  void validate() const;

  /// 2-degree cells covering the ONI box: lats -4..4, lons 190..240 (130 nodes).
  [[nodiscard]] static data::GridSpec default_grid();
};

struct SynthResult {
  data::AnomalyCube anomalies;
  data::MonthlySeries latent;  // mean-removed oscillator state
  std::vector<double> loading;  // [lat][lon], in (0, 1]
};

/// latent z: AR(2) recursion z_t = 2 r cos(w) z_{t-1} - r^2 z_{t-2} + process_noise * eps_t
/// with w = 2 pi / period and r = exp(-damping * w / sqrt(1 - damping^2)), started
/// from z_0 = 1, z_1 = r cos(w) so the noise-free run is r^t cos(w t). The series
/// is then centered on its run mean; cell value = loading * z + observation noise.
/// Process and observation noise use separate seeded streams.
[[nodiscard]] SynthResult generate(const SynthConfig& config);

/// Absolute SST around a fixed seasonal cycle (26 degC +- 1.5), for writing cubes.
[[nodiscard]] data::SstCube to_sst(const data::AnomalyCube& anoms);

void write_latent_csv(std::ostream& out, const data::MonthlySeries& latent);

}  // namespace ensograph::synth
