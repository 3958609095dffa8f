#include "sinr/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sinr {

bool GeoCoord::is_valid(double lon, double lat) {
  return std::isfinite(lon) && std::isfinite(lat) && lon >= -180.0 && lon <= 180.0 &&
         lat >= -90.0 && lat <= 90.0;
}

GeoCoord::GeoCoord(double lon, double lat) : lon_(lon), lat_(lat) {
  if (!is_valid(lon, lat)) {
    throw std::invalid_argument("coordinate out of range: lon=" + std::to_string(lon) +
                                " lat=" + std::to_string(lat));
  }
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::coords: return "coords";
    case InputMode::env: return "env";
    case InputMode::env_plus_coords: return "env+coords";
  }
  return "unknown";
}

InputMode parse_input_mode(const std::string& text) {
  if (text == "coords") return InputMode::coords;
  if (text == "env") return InputMode::env;
  if (text == "env+coords" || text == "env_plus_coords") return InputMode::env_plus_coords;
  throw std::invalid_argument("unknown input mode: " + text);
}

bool needs_env(InputMode mode) { return mode != InputMode::coords; }

std::size_t input_dim(InputMode mode, std::size_t n_env_layers) {
  switch (mode) {
    case InputMode::coords: return kCoordEncodingDim;
    case InputMode::env: return n_env_layers;
    case InputMode::env_plus_coords: return n_env_layers + kCoordEncodingDim;
  }
  return 0;
}

EncodedInput::EncodedInput(InputMode layout, std::vector<double> values)
    : layout_(layout), values_(std::move(values)) {
  const bool ok = [&] {
    switch (layout_) {
      case InputMode::coords:
        return values_.size() == kCoordEncodingDim &&
               std::all_of(values_.begin(), values_.end(),
                           [](double v) { return v >= -1.0 && v <= 1.0; });
      case InputMode::env: return !values_.empty();
      case InputMode::env_plus_coords: return values_.size() > kCoordEncodingDim;
    }
    return false;
  }();
  if (!ok) {
    throw std::invalid_argument("encoded input of length " + std::to_string(values_.size()) +
                                " does not match layout " + to_string(layout_));
  }
}

std::array<double, kCoordEncodingDim> encode_coords(const GeoCoord& c) {
  const double lon_deg = c.lon() == 180.0 ? -180.0 : c.lon();
  const double lon = std::numbers::pi * (lon_deg / 180.0);
  const double lat = std::numbers::pi * (c.lat() / 90.0);
  return {std::sin(lon), std::cos(lon), std::sin(lat), std::cos(lat)};
}

EncodedInput encode_location(const GeoCoord& c) {
  const auto enc = encode_coords(c);
  return EncodedInput(InputMode::coords, {enc.begin(), enc.end()});
}

GridSpec::GridSpec(std::uint32_t resolution) : resolution_(resolution) {
  if (resolution == 0) throw std::invalid_argument("grid resolution must be positive");
}

namespace {

std::uint32_t axis_index(double value, double lo, double step, std::uint32_t count) {
  const double pos = std::floor((value - lo) / step);
  if (pos < 0.0) return 0;
  return std::min(static_cast<std::uint32_t>(pos), count - 1);
}

}  // namespace

std::size_t GridSpec::cell_of(const GeoCoord& c) const {
  const double step = cell_degrees();
  const std::uint32_t col = axis_index(c.lon(), -180.0, step, n_lon());
  const std::uint32_t row = axis_index(c.lat(), -90.0, step, n_lat());
  return std::size_t{row} * n_lon() + col;
}

GeoCoord GridSpec::cell_centroid(std::size_t index) const {
  if (index >= n_cells()) {
    throw std::out_of_range("cell index " + std::to_string(index) + " out of range for " +
                            std::to_string(n_cells()) + " cells");
  }
  const double step = cell_degrees();
  const auto row = index / n_lon();
  const auto col = index % n_lon();
  return GeoCoord(-180.0 + (static_cast<double>(col) + 0.5) * step,
                  -90.0 + (static_cast<double>(row) + 0.5) * step);
}

std::vector<GeoCoord> GridSpec::all_centroids() const {
  std::vector<GeoCoord> out;
  out.reserve(n_cells());
  for (std::size_t i = 0; i < n_cells(); ++i) out.push_back(cell_centroid(i));
  return out;
}

}  // namespace sinr
