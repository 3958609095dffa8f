#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sinr/geo.hpp"
#include "sinr/losses.hpp"
#include "sinr/net.hpp"
#include "sinr/rng.hpp"

namespace sinr {

struct Observation {
  std::uint32_t species = 0;
  GeoCoord location;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Presence-only records with a dense species catalog. Catalog indices are
/// assigned in order of first appearance.
class ObservationSet {
 public:
  std::uint32_t add_species(const std::string& id);
  void add(const std::string& species_id, const GeoCoord& location);
  void add(std::uint32_t species, const GeoCoord& location);

  const std::vector<std::string>& species_ids() const { return species_ids_; }
  const std::vector<Observation>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t n_species() const { return species_ids_.size(); }
  std::optional<std::uint32_t> index_of(const std::string& id) const;
  /// Record count per catalog index.
  std::vector<std::size_t> counts() const;

  friend bool operator==(const ObservationSet& a, const ObservationSet& b) {
    return a.species_ids_ == b.species_ids_ && a.records_ == b.records_;
  }

 private:
  std::vector<std::string> species_ids_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<Observation> records_;
};

struct RowRejection {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string reason;
};

struct ObservationLoad {
  ObservationSet observations;
  std::vector<RowRejection> rejected;
};

/// CSV with a header naming species_id, lon and lat (any order, extra columns ignored).
ObservationLoad read_observations(std::istream& is);
ObservationLoad load_observations(const std::string& path);
void write_observations(std::ostream& os, const ObservationSet& o);
void save_observations(const std::string& path, const ObservationSet& o);

/// Drops species with fewer than min_count records and reindexes densely.
ObservationSet filter_min_count(const ObservationSet& o, std::size_t min_count);

/// Keeps min(k, count) uniformly chosen records per species. Each species
/// gets its own permutation seeded by (seed, species id) and keeps a prefix,
/// so selections for smaller k are contained in those for larger k.
ObservationSet subsample_cap(const ObservationSet& o, std::size_t k, std::uint64_t seed);

/// Keeps the `keep` species plus `extra_random` others chosen uniformly.
/// Extras are a prefix of a seeded permutation, hence nested in extra_random.
ObservationSet select_species(const ObservationSet& o, const std::set<std::string>& keep,
                              std::size_t extra_random, std::uint64_t seed);

/// A single raster layer. Row 0 is the northern edge (lat_max); values are
/// row-major with NaN marking missing cells.
struct RasterGrid {
  std::uint32_t n_rows = 0;
  std::uint32_t n_cols = 0;
  double lon_min = -180.0;
  double lon_max = 180.0;
  double lat_min = -90.0;
  double lat_max = 90.0;
  std::vector<double> values;

  double cell_width() const { return (lon_max - lon_min) / n_cols; }
  double cell_height() const { return (lat_max - lat_min) / n_rows; }
  bool contains(const GeoCoord& c) const;
  /// Flat index of the cell containing c; throws outside the raster bounds.
  std::size_t index_of(const GeoCoord& c) const;
  GeoCoord cell_center(std::size_t index) const;
  bool same_geometry(const RasterGrid& other) const;
  void validate() const;
};

/// Plain-text raster: "ENVGRID n_rows n_cols lon_min lon_max lat_min lat_max"
/// followed by n_rows * n_cols whitespace-separated values, "NA" for missing.
RasterGrid read_raster(std::istream& is);
RasterGrid load_raster(const std::string& path);
void write_raster(std::ostream& os, const RasterGrid& g);
void save_raster(const std::string& path, const RasterGrid& g);

/// Environmental layers z-scored independently (statistics ignore missing
/// cells, population standard deviation), missing cells set to 0. A constant
/// layer normalizes to all zeros.
class EnvRasterStack {
 public:
  static EnvRasterStack fit(std::vector<RasterGrid> layers);

  std::size_t n_layers() const { return layers_.size(); }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& sds() const { return sds_; }
  /// Normalized layers.
  const std::vector<RasterGrid>& layers() const { return layers_; }
  const RasterGrid& geometry() const { return layers_.front(); }

  /// Normalized values of the cell containing c; throws outside the raster bounds.
  std::vector<double> lookup(const GeoCoord& c) const;

 private:
  std::vector<RasterGrid> layers_;
  std::vector<double> means_;
  std::vector<double> sds_;
};

EnvRasterStack load_env_rasters(const std::vector<std::string>& paths);
inline std::vector<double> env_lookup(const EnvRasterStack& s, const GeoCoord& c) {
  return s.lookup(c);
}

/// Network input for one location; env layers first, then the coordinate encoding.
EncodedInput encode_input(const GeoCoord& c, InputMode mode, const EnvRasterStack* env);
/// Column-per-location input matrix, input_dim x n.
Matrix<float> encode_inputs(std::span<const GeoCoord> locs, InputMode mode,
                            const EnvRasterStack* env);

struct SamplerConfig {
  std::size_t batch_size = 2048;
  std::optional<std::size_t> cap_per_species;
  std::uint64_t subsample_seed = 0;
  InputMode input_mode = InputMode::coords;

  void validate() const;
};

struct Batch {
  Matrix<float> inputs;  // input_dim x batch
  BatchTargets targets;
  std::vector<GeoCoord> locations;
};

/// batch_size records drawn uniformly with replacement.
Batch sample_batch(const ObservationSet& o, const SamplerConfig& cfg, const EnvRasterStack* env,
                   Rng& rng);

/// i.i.d. uniform over the lon/lat rectangle [-180, 180] x [-90, 90].
std::vector<GeoCoord> sample_uniform_locations(std::size_t n, Rng& rng);
/// Uniform over a sub-rectangle (used to keep env lookups inside raster bounds).
std::vector<GeoCoord> sample_uniform_locations(std::size_t n, Rng& rng, double lon_min,
                                               double lon_max, double lat_min, double lat_max);

}  // namespace sinr
