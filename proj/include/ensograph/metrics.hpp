#pragma once

#include <span>

namespace ensograph::eval {

/// Centered Pearson coefficient. Throws ValidationError on length mismatch,
/// fewer than 3 points, or a zero-variance series.
[[nodiscard]] double pearson(std::span<const double> a, std::span<const double> b);

/// sqrt(mean((a - b)^2)); throws ValidationError on length mismatch or empty input.
[[nodiscard]] double rmse(std::span<const double> a, std::span<const double> b);

}  // namespace ensograph::eval
