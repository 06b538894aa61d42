#pragma once

#include <filesystem>

#include "ensograph/data.hpp"

namespace ensograph::data {

// A cube lives in two files: `<name>.json` (header) and `<name>.f32`
// (little-endian float32 payload, time-major then lat then lon).

inline constexpr int kCubeFormatVersion = 1;

/// Payload path belonging to a header path (`x.json` -> `x.f32`).
[[nodiscard]] std::filesystem::path payload_path(const std::filesystem::path& meta_path);

/// Reads and validates a cube. Throws IoError / ValidationError.
[[nodiscard]] SstCube load_cube(const std::filesystem::path& meta_path);

/// Validates, then writes header and payload. Throws ValidationError / IoError.
void save_cube(const SstCube& cube, const std::filesystem::path& meta_path);

/// Raw little-endian float32 helpers shared with the checkpoint writer.
void write_f32_le(std::ostream& out, std::span<const float> values);
void read_f32_le(std::istream& in, std::span<float> values);

}  // namespace ensograph::data
