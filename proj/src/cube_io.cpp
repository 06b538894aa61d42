#include "ensograph/cube_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ensograph/errors.hpp"

namespace ensograph::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint32_t to_le(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
  }
  return bits;
}

json read_header(const fs::path& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw IoError(fmt::format("cannot open cube header {}", meta_path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: malformed header: {}", meta_path.string(), e.what()));
  }
}

template <typename T>
T required(const json& header, const char* key) {
  if (!header.contains(key)) throw ValidationError(fmt::format("header field '{}' missing", key));
  try {
    return header.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(fmt::format("header field '{}' has the wrong type", key));
  }
}

}  // namespace

fs::path payload_path(const fs::path& meta_path) {
  fs::path out = meta_path;
  out.replace_extension(".f32");
  return out;
}

void write_f32_le(std::ostream& out, std::span<const float> values) {
  std::vector<std::uint32_t> buffer(values.size());
  for (std::size_t n = 0; n < values.size(); ++n) buffer[n] = to_le(std::bit_cast<std::uint32_t>(values[n]));
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(std::uint32_t)));
}

void read_f32_le(std::istream& in, std::span<float> values) {
  std::vector<std::uint32_t> buffer(values.size());
  in.read(reinterpret_cast<char*>(buffer.data()),
          static_cast<std::streamsize>(buffer.size() * sizeof(std::uint32_t)));
  if (in.gcount() != static_cast<std::streamsize>(buffer.size() * sizeof(std::uint32_t))) {
    throw ValidationError(fmt::format("short read: got {} of {} bytes", in.gcount(),
                                      buffer.size() * sizeof(std::uint32_t)));
  }
  for (std::size_t n = 0; n < values.size(); ++n) values[n] = std::bit_cast<float>(to_le(buffer[n]));
}

SstCube load_cube(const fs::path& meta_path) {
  if (!fs::exists(meta_path)) throw IoError(fmt::format("no such file: {}", meta_path.string()));
  const json header = read_header(meta_path);

  const int version = required<int>(header, "format_version");
  if (version != kCubeFormatVersion) {
    throw ValidationError(fmt::format("unsupported format_version {}", version));
  }
  if (header.contains("units") && header["units"] != "degC") {
    throw ValidationError("units must be \"degC\"");
  }
  SstCube cube;
  cube.start = {required<int>(header, "start_year"), required<int>(header, "start_month")};
  const long n_time = required<long>(header, "n_time");
  if (n_time < 1) throw ValidationError("n_time must be >= 1");
  cube.n_time = static_cast<std::size_t>(n_time);
  cube.grid.lats = required<std::vector<double>>(header, "lats");
  cube.grid.lons = required<std::vector<double>>(header, "lons");
  cube.missing_value = static_cast<float>(required<double>(header, "missing_value"));
  cube.grid.validate();

  const fs::path payload = payload_path(meta_path);
  if (!fs::exists(payload)) throw IoError(fmt::format("no such file: {}", payload.string()));
  const std::size_t expected_bytes = cube.n_time * cube.grid.n_cells() * sizeof(float);
  const auto actual_bytes = static_cast<std::size_t>(fs::file_size(payload));
  if (actual_bytes != expected_bytes) {
    throw ValidationError(fmt::format(
        "payload {} holds {} bytes; header declares {} months x {} lats x {} lons = {} bytes",
        payload.string(), actual_bytes, cube.n_time, cube.grid.n_lat(), cube.grid.n_lon(),
        expected_bytes));
  }
  std::ifstream in(payload, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open payload {}", payload.string()));
  cube.allocate();
  read_f32_le(in, cube.values);

  const auto sentinel = std::bit_cast<std::uint32_t>(cube.missing_value);
  for (std::size_t n = 0; n < cube.values.size(); ++n) {
    if (std::bit_cast<std::uint32_t>(cube.values[n]) == sentinel) cube.missing[n] = 1;
  }
  cube.validate();
  return cube;
}

void save_cube(const SstCube& cube, const fs::path& meta_path) {
  cube.validate();
  if (std::isnan(cube.missing_value)) throw ValidationError("missing_value sentinel must not be NaN");

  json header;
  header["format_version"] = kCubeFormatVersion;
  header["start_year"] = cube.start.year;
  header["start_month"] = cube.start.month;
  header["n_time"] = cube.n_time;
  header["lats"] = cube.grid.lats;
  header["lons"] = cube.grid.lons;
  header["missing_value"] = static_cast<double>(cube.missing_value);
  header["units"] = "degC";

  std::vector<float> payload(cube.values);
  for (std::size_t n = 0; n < payload.size(); ++n) {
    if (cube.missing[n]) {
      payload[n] = cube.missing_value;
    } else if (std::bit_cast<std::uint32_t>(payload[n]) == std::bit_cast<std::uint32_t>(cube.missing_value)) {
      throw ValidationError(fmt::format("present value at flat index {} equals the missing sentinel", n));
    }
  }

  std::ofstream meta(meta_path, std::ios::trunc);
  if (!meta) throw IoError(fmt::format("cannot write {}", meta_path.string()));
  meta << header.dump(2) << '\n';
  if (!meta) throw IoError(fmt::format("write failed: {}", meta_path.string()));

  const fs::path payload_file = payload_path(meta_path);
  std::ofstream out(payload_file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", payload_file.string()));
  write_f32_le(out, payload);
  if (!out) throw IoError(fmt::format("write failed: {}", payload_file.string()));
}

}  // namespace ensograph::data
