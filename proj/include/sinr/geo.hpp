#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sinr {

/// A longitude/latitude pair in degrees. Construction validates the range.
class GeoCoord {
 public:
  GeoCoord() = default;
  GeoCoord(double lon, double lat);

  double lon() const { return lon_; }
  double lat() const { return lat_; }

  static bool is_valid(double lon, double lat);

  friend bool operator==(const GeoCoord&, const GeoCoord&) = default;

 private:
  double lon_ = 0.0;
  double lat_ = 0.0;
};

inline constexpr std::size_t kCoordEncodingDim = 4;

/// Which features make up a network input vector.
enum class InputMode : std::uint8_t { coords = 0, env = 1, env_plus_coords = 2 };

std::string to_string(InputMode mode);
InputMode parse_input_mode(const std::string& text);
bool needs_env(InputMode mode);
std::size_t input_dim(InputMode mode, std::size_t n_env_layers);

/// A single network input. For env_plus_coords the environmental values come
/// first and the four coordinate entries last.
class EncodedInput {
 public:
  EncodedInput(InputMode layout, std::vector<double> values);

  InputMode layout() const { return layout_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

 private:
  InputMode layout_;
  std::vector<double> values_;
};

/// Sinusoidal coordinate encoding:
/// [sin(pi*lon/180), cos(pi*lon/180), sin(pi*lat/90), cos(pi*lat/90)].
/// lon = 180 is encoded as lon = -180 so both edges give identical vectors.
std::array<double, kCoordEncodingDim> encode_coords(const GeoCoord& c);
EncodedInput encode_location(const GeoCoord& c);

/// Equal-angle lon/lat grid with 2*resolution columns and resolution rows.
///
/// Cells are half-open [lo, hi) along both axes, except the last column and
/// the last row which are closed so that lon = 180 and lat = 90 are owned.
/// Cell indices are row-major starting at the south-west corner:
/// index = row * n_lon + col, row 0 spans lat [-90, -90 + 180/resolution).
class GridSpec {
 public:
  explicit GridSpec(std::uint32_t resolution);

  std::uint32_t resolution() const { return resolution_; }
  std::uint32_t n_lon() const { return 2 * resolution_; }
  std::uint32_t n_lat() const { return resolution_; }
  std::size_t n_cells() const { return std::size_t{n_lon()} * n_lat(); }
  double cell_degrees() const { return 180.0 / resolution_; }

  std::size_t cell_of(const GeoCoord& c) const;
  GeoCoord cell_centroid(std::size_t index) const;
  std::vector<GeoCoord> all_centroids() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  std::uint32_t resolution_;
};

}  // namespace sinr
