#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ensograph/errors.hpp"
#include "ensograph/metrics.hpp"
#include "ensograph/synth.hpp"

using namespace ensograph;
using namespace ensograph::synth;

namespace {

double autocorr(const std::vector<double>& z, std::size_t lag) {
  return eval::pearson(std::span<const double>(z.data(), z.size() - lag),
                       std::span<const double>(z.data() + lag, z.size() - lag));
}

}  // namespace

TEST_CASE("noise-free run is a damped sinusoid times the loading") {
  SynthConfig c;
  c.process_noise = 0.0;
  c.observation_noise = 0.0;
  c.months = 240;
  const SynthResult r = generate(c);

  const double w = 2.0 * std::numbers::pi / c.period;
  const double decay = std::exp(-c.damping * w / std::sqrt(1.0 - c.damping * c.damping));
  std::vector<double> expected(c.months);
  double mean = 0.0;
  for (std::size_t t = 0; t < c.months; ++t) {
    expected[t] = std::pow(decay, static_cast<double>(t)) * std::cos(w * static_cast<double>(t));
    mean += expected[t] / static_cast<double>(c.months);
  }
  for (std::size_t t = 0; t < c.months; ++t) CHECK(r.latent.values[t] == doctest::Approx(expected[t] - mean).epsilon(1e-9));

  const std::size_t cells = c.grid.n_cells();
  bool exact = true;
  for (std::size_t t = 0; t < c.months; ++t)
    for (std::size_t k = 0; k < cells; ++k) exact = exact && r.anomalies.values[t * cells + k] == r.loading[k] * r.latent.values[t];
  CHECK(exact);
  for (double l : r.loading) {
    CHECK(l > 0.0);
    CHECK(l <= 1.0);
  }
}

TEST_CASE("same seed gives identical output") {
  SynthConfig c;
  c.months = 120;
  c.seed = 7;
  const SynthResult a = generate(c);
  const SynthResult b = generate(c);
  CHECK(a.anomalies.values == b.anomalies.values);
  CHECK(a.latent.values == b.latent.values);
  c.seed = 8;
  CHECK(generate(c).anomalies.values != a.anomalies.values);
}

TEST_CASE("default run statistics") {
  const SynthConfig c;
  REQUIRE(c.grid.n_cells() == 130);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    SynthConfig s = c;
    s.seed = seed;
    const SynthResult r = generate(s);
    const std::size_t cells = s.grid.n_cells();

    // Area mean over high-loading cells tracks the latent.
    std::vector<double> area(s.months, 0.0);
    std::size_t n_high = 0;
    for (std::size_t k = 0; k < cells; ++k) {
      if (r.loading[k] < 0.8) continue;
      ++n_high;
      for (std::size_t t = 0; t < s.months; ++t) area[t] += r.anomalies.values[t * cells + k];
    }
    REQUIRE(n_high > 0);
    CHECK(eval::pearson(area, r.latent.values) >= 0.9);

    for (std::size_t k = 0; k < cells; ++k) {
      double mean = 0.0;
      for (std::size_t t = 0; t < s.months; ++t) mean += r.anomalies.values[t * cells + k];
      CHECK(std::abs(mean / static_cast<double>(s.months)) <= 0.1);
    }

    CHECK(autocorr(r.latent.values, 1) > autocorr(r.latent.values, static_cast<std::size_t>(s.period / 2)));
  }
}

TEST_CASE("observation noise leaves the latent untouched") {
  SynthConfig c;
  c.months = 300;
  const SynthResult a = generate(c);
  c.observation_noise = 1.7;
  const SynthResult b = generate(c);
  CHECK(a.latent.values == b.latent.values);
  CHECK(a.anomalies.values != b.anomalies.values);
}

TEST_CASE("config validation") {
  SynthConfig c;
  c.months = 23;
  CHECK_THROWS_AS((void)generate(c), UsageError);
  c = SynthConfig{};
  c.period = 3.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SynthConfig{};
  c.damping = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SynthConfig{};
  c.process_noise = -0.1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SynthConfig{};
  c.observation_noise = -0.1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  CHECK_NOTHROW(SynthConfig{}.validate());
}

TEST_CASE("absolute SST and latent CSV") {
  SynthConfig c;
  c.months = 24;
  c.process_noise = 0.0;
  c.observation_noise = 0.0;
  const SynthResult r = generate(c);
  const data::SstCube sst = to_sst(r.anomalies);
  CHECK_NOTHROW(sst.validate());
  const std::size_t cells = c.grid.n_cells();
  // March carries the seasonal maximum of 27.5 degC.
  CHECK(sst.values[2 * cells] == doctest::Approx(27.5 + r.anomalies.values[2 * cells]).epsilon(1e-6));

  std::ostringstream out;
  write_latent_csv(out, r.latent);
  const std::string text = out.str();
  CHECK(text.rfind("year,month,latent\n1901,1,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 25);
}
