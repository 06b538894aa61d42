#include "ensograph/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ensograph/errors.hpp"

namespace ensograph::eval {

namespace {

// Sum of squared deviations, or 0 when the series is constant up to rounding.
double centered_sum_squares(std::span<const double> x, double mean) {
  double ss = 0.0;
  double scale = 0.0;
  for (double v : x) {
    ss += (v - mean) * (v - mean);
    scale = std::max(scale, std::abs(v));
  }
  const double floor = 1e-12 * scale;
  return ss <= static_cast<double>(x.size()) * floor * floor ? 0.0 : ss;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError(fmt::format("pearson: lengths differ ({} vs {})", a.size(), b.size()));
  }
  if (a.size() < 3) throw ValidationError(fmt::format("pearson: need >= 3 points, got {}", a.size()));
  const auto n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  const double saa = centered_sum_squares(a, ma);
  const double sbb = centered_sum_squares(b, mb);
  if (saa == 0.0 || sbb == 0.0) throw ValidationError("pearson: zero-variance series, correlation undefined");
  double sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sab += (a[i] - ma) * (b[i] - mb);
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError(fmt::format("rmse: lengths differ ({} vs {})", a.size(), b.size()));
  }
  if (a.empty()) throw ValidationError("rmse: empty series");
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss / static_cast<double>(a.size()));
}

}  // namespace ensograph::eval
