#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ensograph/cube_io.hpp"
#include "ensograph/data.hpp"
#include "ensograph/errors.hpp"
#include "test_support.hpp"

using namespace ensograph;
using namespace ensograph::data;
using ensograph::testing::random_cube;
using ensograph::testing::TempDir;

namespace {

SstCube constant_cube(float value, std::size_t n_time, YearMonth start = {1990, 1}) {
  SstCube cube;
  cube.grid = GridSpec::regular(-2, 2, 2, 200, 204, 2);
  cube.start = start;
  cube.n_time = n_time;
  cube.allocate();
  std::fill(cube.values.begin(), cube.values.end(), value);
  return cube;
}

AnomalyCube anomaly_cube(const GridSpec& grid, YearMonth start, std::size_t n_time) {
  AnomalyCube a;
  a.grid = grid;
  a.start = start;
  a.n_time = n_time;
  a.allocate();
  return a;
}

bool bitwise_equal(const SstCube& a, const SstCube& b) {
  if (!(a.grid == b.grid) || !(a.start == b.start) || a.n_time != b.n_time || a.missing != b.missing) return false;
  for (std::size_t n = 0; n < a.values.size(); ++n) {
    if (a.missing[n]) continue;
    if (std::memcmp(&a.values[n], &b.values[n], sizeof(float)) != 0) return false;
  }
  return true;
}

// Independent area mean then centered window mean.
std::vector<double> brute_index(const AnomalyCube& a, const std::vector<NodeId>& nodes, int k, bool coslat) {
  std::vector<double> area(a.n_time);
  for (std::size_t t = 0; t < a.n_time; ++t) {
    double num = 0.0, den = 0.0;
    for (const auto& n : nodes) {
      const double w = coslat ? std::cos(a.grid.lats[n.lat] * std::numbers::pi / 180.0) : 1.0;
      num += w * a.at(t, n.lat, n.lon);
      den += w;
    }
    area[t] = num / den;
  }
  std::vector<double> out;
  for (std::size_t v = 0; v + static_cast<std::size_t>(k) <= area.size(); ++v) {
    double s = 0.0;
    for (int q = 0; q < k; ++q) s += area[v + static_cast<std::size_t>(q)];
    out.push_back(s / k);
  }
  return out;
}

}  // namespace

TEST_CASE("year-month arithmetic and period parsing") {
  CHECK(YearMonth{1871, 1}.plus(1235) == YearMonth{1973, 12});
  CHECK(YearMonth{2000, 3}.plus(-3) == YearMonth{1999, 12});
  CHECK(parse_year_range("1871:1973").first == 1871);
  CHECK(parse_year_range("1871:1973").last == 1973);
  CHECK_THROWS_AS((void)parse_year_range("1871-1973"), UsageError);
  CHECK_THROWS_AS((void)parse_year_range("1990:1989"), UsageError);
  CHECK_THROWS_AS((void)parse_year_range("19x0:2000"), UsageError);
  CHECK(canonical_longitude(-170.0) == 190.0);
  CHECK(canonical_longitude(-120.0) == 240.0);
  CHECK(canonical_longitude(360.0) == 0.0);
}

TEST_CASE("grid and cube validation") {
  CHECK_NOTHROW(GridSpec::regular(-4, 4, 2, 190, 240, 2).validate());
  CHECK_THROWS_AS((GridSpec{{2.0, 1.0}, {10.0}}.validate()), ValidationError);
  CHECK_THROWS_AS((GridSpec{{0.0}, {360.0}}.validate()), ValidationError);
  CHECK_THROWS_AS((GridSpec{{}, {10.0}}.validate()), ValidationError);

  SstCube cube = constant_cube(20.0f, 2);
  CHECK_NOTHROW(cube.validate());
  cube.values[3] = 46.0f;
  CHECK_THROWS_AS(cube.validate(), ValidationError);
  cube.missing[3] = 1;  // masked cells are exempt from the range gate
  CHECK_NOTHROW(cube.validate());
  cube.values[4] = std::nanf("");
  CHECK_THROWS_AS(cube.validate(), ValidationError);
}

TEST_CASE("minimal cube round trip") {
  TempDir dir("data_min");
  SstCube cube;
  cube.grid = GridSpec{{0.0}, {180.0}};
  cube.start = {2000, 6};
  cube.n_time = 1;
  cube.allocate();
  cube.values[0] = 20.0f;
  save_cube(cube, dir.file("one.json"));
  const SstCube back = load_cube(dir.file("one.json"));
  CHECK(back.values[0] == 20.0f);
  CHECK(back.missing[0] == 0);
  CHECK(back.start == YearMonth{2000, 6});
  CHECK(std::filesystem::file_size(dir.file("one.f32")) == 4);
}

TEST_CASE("header fields follow the documented layout") {
  TempDir dir("data_header");
  Rng rng(1);
  save_cube(random_cube(rng, 2, 3, 4), dir.file("c.json"));
  std::ifstream in(dir.file("c.json"));
  const auto header = nlohmann::json::parse(in);
  for (const char* key : {"format_version", "start_year", "start_month", "n_time", "lats", "lons", "missing_value",
                          "units"}) {
    CHECK_MESSAGE(header.contains(key), key);
  }
  CHECK(header["format_version"] == 1);
  CHECK(header["units"] == "degC");
  CHECK(payload_path(dir.file("c.json")) == std::filesystem::path(dir.file("c.f32")));
}

TEST_CASE("load then save is bitwise identity on 100 random cubes") {
  TempDir dir("data_roundtrip");
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const auto n_lat = 1 + rng.below(4);
    const auto n_lon = 1 + rng.below(5);
    const auto n_time = 1 + rng.below(30);
    const YearMonth start{1850 + static_cast<int>(rng.below(150)), 1 + static_cast<int>(rng.below(12))};
    const SstCube cube = random_cube(rng, n_lat, n_lon, n_time, start, trial % 3 == 0 ? 0.2 : 0.0);
    const std::string path = dir.file("r" + std::to_string(trial) + ".json");
    save_cube(cube, path);
    CHECK(bitwise_equal(load_cube(path), cube));
  }
}

TEST_CASE("load rejects a truncated payload with byte counts") {
  TempDir dir("data_trunc");
  Rng rng(3);
  const SstCube cube = random_cube(rng, 2, 2, 24);
  save_cube(cube, dir.file("c.json"));
  std::filesystem::resize_file(dir.file("c.f32"), 23 * 4 * 4);
  try {
    (void)load_cube(dir.file("c.json"));
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find("368") != std::string::npos);
    CHECK(what.find("384") != std::string::npos);
  }
  CHECK_THROWS_AS((void)load_cube(dir.file("absent.json")), IoError);
}

TEST_CASE("save refuses invalid cubes") {
  TempDir dir("data_refuse");
  SstCube hot = constant_cube(50.0f, 2);
  CHECK_THROWS_AS(save_cube(hot, dir.file("hot.json")), ValidationError);
  SstCube empty = constant_cube(20.0f, 1);
  empty.n_time = 0;
  empty.allocate();
  CHECK_THROWS_AS(save_cube(empty, dir.file("empty.json")), ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir.file("hot.json")));
}

TEST_CASE("climatology") {
  const SstCube flat = constant_cube(20.0f, 24);
  const Climatology clim = climatology(flat, {1990, 1991});
  for (double v : clim.values) CHECK(v == doctest::Approx(20.0));

  SstCube seasonal = constant_cube(0.0f, 36);
  for (std::size_t t = 0; t < seasonal.n_time; ++t)
    for (std::size_t c = 0; c < seasonal.grid.n_cells(); ++c)
      seasonal.values[t * seasonal.grid.n_cells() + c] = static_cast<float>(seasonal.month_at(t).month);
  const Climatology sc = climatology(seasonal, {1990, 1992});
  for (int m = 1; m <= 12; ++m) CHECK(sc.values[sc.index(m, 1, 1)] == doctest::Approx(m));

  CHECK_THROWS_AS((void)climatology(flat, {1990, 1989}), UsageError);
  CHECK_THROWS(climatology(flat, {2100, 2101}));
}

TEST_CASE("anomalies") {
  Rng rng(4);
  const SstCube cube = random_cube(rng, 3, 4, 48, {1980, 1}, 0.05);
  const Climatology clim = climatology(cube, {1980, 1983});

  // Oracle: cell-by-cell subtraction.
  const AnomalyCube a = anomalies(cube, clim);
  for (std::size_t t = 0; t < cube.n_time; ++t)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t n = cube.index(t, i, j);
        CHECK(a.missing[n] == cube.missing[n]);
        if (!cube.missing[n]) {
          const double expect = static_cast<double>(cube.values[n]) - clim.values[clim.index(cube.month_at(t).month, i, j)];
          CHECK(a.values[n] == doctest::Approx(expect).epsilon(1e-12));
        }
      }

  // Zero per-cell, per-calendar-month mean over the base period.
  for (int m = 1; m <= 12; ++m)
    for (std::size_t c = 0; c < cube.grid.n_cells(); ++c) {
      double s = 0.0;
      int count = 0;
      for (std::size_t t = static_cast<std::size_t>(m - 1); t < cube.n_time; t += 12) {
        if (a.missing[t * cube.grid.n_cells() + c]) continue;
        s += a.values[t * cube.grid.n_cells() + c];
        ++count;
      }
      if (count > 0) CHECK(std::abs(s / count) <= 1e-5);
    }

  SstCube shifted = constant_cube(20.0f, 24);
  const Climatology c20 = climatology(shifted, {1990, 1991});
  for (auto& v : shifted.values) v += 1.5f;
  for (double v : anomalies(shifted, c20).values) CHECK(v == doctest::Approx(1.5));
  for (double v : anomalies(constant_cube(20.0f, 24), c20).values) CHECK(v == 0.0);
}

TEST_CASE("region nodes") {
  const GridSpec global = GridSpec::regular(-88, 88, 2, 0, 358, 2);
  const auto nodes = region_nodes(global, RegionBox::oni());
  CHECK(nodes.size() == 130);
  CHECK(global.lats[nodes.front().lat] == -4.0);
  CHECK(global.lons[nodes.front().lon] == 190.0);
  CHECK(global.lons[nodes.back().lon] == 240.0);
  CHECK(region_nodes(global, {0.0, 0.0, 100.0, 100.0}).size() == 1);
  CHECK_THROWS_AS((void)region_nodes(global, {0.5, 1.5, 100.0, 100.0}), ValidationError);
}

TEST_CASE("area mean") {
  GridSpec grid{{0.0, 60.0}, {200.0}};
  AnomalyCube a = anomaly_cube(grid, {2000, 1}, 1);
  a.values = {0.0, 1.0};
  const std::vector<NodeId> nodes{{0, 0}, {1, 0}};
  CHECK(area_mean(a, nodes, Weighting::CosLat).values[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  a.values = {1.0, 3.0};
  CHECK(area_mean(a, nodes, Weighting::Uniform).values[0] == doctest::Approx(2.0));
  a.values = {0.7, 0.7};
  CHECK(area_mean(a, nodes, Weighting::Uniform).values[0] == doctest::Approx(0.7));
  CHECK(area_mean(a, nodes, Weighting::CosLat).values[0] == doctest::Approx(0.7));
}

TEST_CASE("running mean") {
  const MonthlySeries s{{2000, 1}, {1, 2, 3, 4, 5}};
  const IndexSeries r = running_mean(s, 3);
  CHECK(r.values == std::vector<double>{2, 3, 4});
  CHECK(r.start == YearMonth{2000, 2});  // labeled at the center month
  CHECK(running_mean(s, 1).values == s.values);
  CHECK_THROWS_AS((void)running_mean(s, 0), UsageError);

  Rng rng(5);
  MonthlySeries x{{1950, 1}, {}};
  for (int n = 0; n < 40; ++n) x.values.push_back(rng.uniform(-2, 2));
  const IndexSeries r5 = running_mean(x, 5);
  REQUIRE(r5.values.size() == 36);
  CHECK(r5.start == YearMonth{1950, 3});
  for (std::size_t v = 0; v < r5.values.size(); ++v) {
    double sum = 0.0;
    for (std::size_t q = 0; q < 5; ++q) sum += x.values[v + q];
    CHECK(r5.values[v] == doctest::Approx(sum / 5).epsilon(1e-12));
  }

  // Adding a constant commutes with the running mean.
  MonthlySeries shifted = x;
  for (auto& v : shifted.values) v += 3.25;
  const IndexSeries rs = running_mean(shifted, 5);
  for (std::size_t v = 0; v < rs.values.size(); ++v) CHECK(std::abs(rs.values[v] - (r5.values[v] + 3.25)) <= 1e-6);
}

TEST_CASE("oni index") {
  const GridSpec grid = GridSpec::regular(-6, 6, 2, 186, 244, 2);
  AnomalyCube zero = anomaly_cube(grid, {1990, 1}, 12);
  for (double v : oni(zero, RegionBox::oni()).values) CHECK(v == 0.0);
  AnomalyCube ones = zero;
  std::fill(ones.values.begin(), ones.values.end(), 1.0);
  for (double v : oni(ones, RegionBox::oni()).values) CHECK(v == doctest::Approx(1.0));

  Rng rng(6);
  AnomalyCube rnd = zero;
  for (auto& v : rnd.values) v = rng.uniform(-3, 3);
  const auto nodes = region_nodes(grid, RegionBox::oni());
  for (int k : {3, 5}) {
    for (bool coslat : {true, false}) {
      const IndexSeries idx = oni(rnd, RegionBox::oni(), k, coslat ? Weighting::CosLat : Weighting::Uniform);
      const auto oracle = brute_index(rnd, nodes, k, coslat);
      REQUIRE(idx.values.size() == oracle.size());
      for (std::size_t v = 0; v < oracle.size(); ++v) CHECK(idx.values[v] == doctest::Approx(oracle[v]).epsilon(1e-12));
    }
  }
  // Equals the running mean of the area mean exactly.
  const IndexSeries composed = running_mean(area_mean(rnd, nodes, Weighting::CosLat), 3);
  CHECK(oni(rnd, RegionBox::oni()).values == composed.values);
}

TEST_CASE("sample construction") {
  const GridSpec grid{{0.0}, {200.0, 202.0}};
  const std::vector<NodeId> nodes{{0, 0}, {0, 1}};

  AnomalyCube training_span = anomaly_cube(grid, {1871, 1}, 1236);
  CHECK(make_samples(training_span, nodes, 3, 1).size() == 1233);
  CHECK(make_samples(anomaly_cube(grid, {2000, 1}, 10), nodes, 3, 1).size() == 7);
  CHECK_THROWS_AS((void)make_samples(anomaly_cube(grid, {2000, 1}, 3), nodes, 3, 1), ValidationError);

  // Count formula against brute-force enumeration for all small (T, w, H).
  for (std::size_t T = 2; T <= 50; ++T)
    for (int w = 1; w <= 6; ++w)
      for (int H = 1; H <= 6; ++H) {
        std::size_t brute = 0;
        for (std::size_t s = 0; s < T; ++s) brute += (s + static_cast<std::size_t>(w + H) <= T) ? 1 : 0;
        const AnomalyCube a = anomaly_cube(grid, {2000, 1}, T);
        if (brute == 0) {
          CHECK_THROWS(make_samples(a, nodes, w, H));
        } else {
          CHECK(make_samples(a, nodes, w, H).size() == brute);
        }
      }

  // Window and target placement.
  AnomalyCube a = anomaly_cube(grid, {2000, 1}, 12);
  for (std::size_t t = 0; t < 12; ++t) {
    a.values[t * 2] = static_cast<double>(t);
    a.values[t * 2 + 1] = 100.0 + static_cast<double>(t);
  }
  const SampleSet s = make_samples(a, nodes, 3, 2);
  REQUIRE(s.size() == 8);
  CHECK(s.sample_start[4] == YearMonth{2000, 5});
  const auto in = s.input(4);
  CHECK(std::vector<double>(in.begin(), in.end()) == std::vector<double>{4, 104, 5, 105, 6, 106});
  const auto tg = s.target(4);
  CHECK(std::vector<double>(tg.begin(), tg.end()) == std::vector<double>{7, 107, 8, 108});

  // Samples touching a missing value are dropped and counted.
  a.missing[5 * 2 + 1] = 1;
  const SampleSet gappy = make_samples(a, nodes, 3, 2);
  CHECK(gappy.size() + gappy.dropped == 8);
  CHECK(gappy.dropped == 5);
}

TEST_CASE("split by years") {
  const GridSpec grid{{0.0}, {200.0}};
  const AnomalyCube full = anomaly_cube(grid, {1854, 1}, (2020 - 1854 + 1) * 12);
  const AnomalyCube train = split_by_years(full, {1871, 1973});
  CHECK(train.n_time == 1236);
  CHECK(train.start == YearMonth{1871, 1});
  CHECK(split_by_years(full, {1984, 2020}).n_time == 444);
  CHECK_THROWS_AS((void)split_by_years(full, {2100, 2101}), ValidationError);
}
