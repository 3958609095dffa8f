#include "sinr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sinr {

// ---------------------------------------------------------------------------
// ObservationSet

std::uint32_t ObservationSet::add_species(const std::string& id) {
  auto it = index_.find(id);
  if (it != index_.end()) return it->second;
  const auto idx = static_cast<std::uint32_t>(species_ids_.size());
  species_ids_.push_back(id);
  index_.emplace(id, idx);
  return idx;
}

void ObservationSet::add(const std::string& species_id, const GeoCoord& location) {
  records_.push_back({add_species(species_id), location});
}

void ObservationSet::add(std::uint32_t species, const GeoCoord& location) {
  if (species >= species_ids_.size()) throw std::out_of_range("species index not in catalog");
  records_.push_back({species, location});
}

std::optional<std::uint32_t> ObservationSet::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> ObservationSet::counts() const {
  std::vector<std::size_t> out(species_ids_.size(), 0);
  for (const auto& r : records_) ++out[r.species];
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return is;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

}  // namespace

ObservationLoad read_observations(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("observation file is empty");
  const auto header = split_csv(line);
  auto column = [&](std::string_view name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("missing required column: " + std::string(name));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_species = column("species_id");
  const std::size_t c_lon = column("lon");
  const std::size_t c_lat = column("lat");
  const std::size_t needed = std::max({c_species, c_lon, c_lat}) + 1;

  ObservationLoad out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() < needed) {
      out.rejected.push_back({line_no, "too few columns"});
      continue;
    }
    const auto lon = parse_double(fields[c_lon]);
    const auto lat = parse_double(fields[c_lat]);
    if (!lon || !lat) {
      out.rejected.push_back({line_no, "unparsable coordinate"});
      continue;
    }
    if (!GeoCoord::is_valid(*lon, *lat)) {
      out.rejected.push_back({line_no, "coordinate out of range"});
      continue;
    }
    if (fields[c_species].empty()) {
      out.rejected.push_back({line_no, "empty species_id"});
      continue;
    }
    out.observations.add(std::string(fields[c_species]), GeoCoord(*lon, *lat));
  }
  return out;
}

ObservationLoad load_observations(const std::string& path) {
  auto is = open_input(path);
  return read_observations(is);
}

void write_observations(std::ostream& os, const ObservationSet& o) {
  os << "species_id,lon,lat\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : o.records()) {
    os << o.species_ids()[r.species] << ',' << r.location.lon() << ',' << r.location.lat() << '\n';
  }
}

void save_observations(const std::string& path, const ObservationSet& o) {
  auto os = open_output(path);
  write_observations(os, o);
}

// ---------------------------------------------------------------------------
// Filtering and subsampling

namespace {

/// Copies the records whose `keep` flag is set. Surviving species keep their
/// relative catalog order and are reindexed densely.
ObservationSet copy_selected(const ObservationSet& o, const std::vector<bool>& keep_record) {
  std::vector<bool> survives(o.n_species(), false);
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (keep_record[i]) survives[o.records()[i].species] = true;
  }
  ObservationSet out;
  for (std::size_t s = 0; s < o.n_species(); ++s) {
    if (survives[s]) out.add_species(o.species_ids()[s]);
  }
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (!keep_record[i]) continue;
    const auto& r = o.records()[i];
    out.add(o.species_ids()[r.species], r.location);
  }
  return out;
}

}  // namespace

ObservationSet filter_min_count(const ObservationSet& o, std::size_t min_count) {
  if (min_count == 0) throw std::invalid_argument("min_count must be at least 1");
  const auto counts = o.counts();
  std::vector<bool> keep(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) keep[i] = counts[o.records()[i].species] >= min_count;
  return copy_selected(o, keep);
}

ObservationSet subsample_cap(const ObservationSet& o, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("cap must be at least 1");
  std::vector<std::vector<std::size_t>> by_species(o.n_species());
  for (std::size_t i = 0; i < o.size(); ++i) by_species[o.records()[i].species].push_back(i);

  std::vector<bool> keep(o.size(), false);
  for (std::size_t s = 0; s < by_species.size(); ++s) {
    auto& idx = by_species[s];
    if (idx.size() > k) {
      Rng rng = derive_rng(seed, fnv1a64(o.species_ids()[s]));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(k);
    }
    for (auto i : idx) keep[i] = true;
  }
  return copy_selected(o, keep);
}

ObservationSet select_species(const ObservationSet& o, const std::set<std::string>& keep,
                              std::size_t extra_random, std::uint64_t seed) {
  std::vector<bool> species_kept(o.n_species(), false);
  for (const auto& id : keep) {
    const auto idx = o.index_of(id);
    if (!idx) throw std::invalid_argument("species not in catalog: " + id);
    species_kept[*idx] = true;
  }
  std::vector<std::uint32_t> others;
  for (std::uint32_t s = 0; s < o.n_species(); ++s) {
    if (!species_kept[s]) others.push_back(s);
  }
  if (extra_random > others.size()) {
    throw std::invalid_argument("requested " + std::to_string(extra_random) +
                                " extra species but only " + std::to_string(others.size()) +
                                " are available");
  }
  Rng rng = derive_rng(seed, 0x5e1ec7);
  std::shuffle(others.begin(), others.end(), rng);
  for (std::size_t i = 0; i < extra_random; ++i) species_kept[others[i]] = true;

  std::vector<bool> keep_record(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) keep_record[i] = species_kept[o.records()[i].species];
  return copy_selected(o, keep_record);
}

// ---------------------------------------------------------------------------
// Rasters

bool RasterGrid::contains(const GeoCoord& c) const {
  return c.lon() >= lon_min && c.lon() <= lon_max && c.lat() >= lat_min && c.lat() <= lat_max;
}

std::size_t RasterGrid::index_of(const GeoCoord& c) const {
  if (!contains(c)) {
    throw std::out_of_range("location (" + std::to_string(c.lon()) + ", " +
                            std::to_string(c.lat()) + ") is outside the raster bounds");
  }
  auto col = static_cast<std::int64_t>(std::floor((c.lon() - lon_min) / cell_width()));
  auto row = static_cast<std::int64_t>(std::floor((lat_max - c.lat()) / cell_height()));
  col = std::clamp<std::int64_t>(col, 0, n_cols - 1);
  row = std::clamp<std::int64_t>(row, 0, n_rows - 1);
  return static_cast<std::size_t>(row) * n_cols + static_cast<std::size_t>(col);
}

GeoCoord RasterGrid::cell_center(std::size_t index) const {
  if (index >= values.size()) throw std::out_of_range("raster cell index out of range");
  const auto row = index / n_cols;
  const auto col = index % n_cols;
  return GeoCoord(lon_min + (static_cast<double>(col) + 0.5) * cell_width(),
                  lat_max - (static_cast<double>(row) + 0.5) * cell_height());
}

bool RasterGrid::same_geometry(const RasterGrid& other) const {
  return n_rows == other.n_rows && n_cols == other.n_cols && lon_min == other.lon_min &&
         lon_max == other.lon_max && lat_min == other.lat_min && lat_max == other.lat_max;
}

void RasterGrid::validate() const {
  if (n_rows == 0 || n_cols == 0) throw std::invalid_argument("raster must have cells");
  if (!(lon_min < lon_max && lat_min < lat_max) || !GeoCoord::is_valid(lon_min, lat_min) ||
      !GeoCoord::is_valid(lon_max, lat_max)) {
    throw std::invalid_argument("raster bounds are invalid");
  }
  if (values.size() != std::size_t{n_rows} * n_cols) {
    throw std::invalid_argument("raster value count does not match its shape");
  }
}

RasterGrid read_raster(std::istream& is) {
  std::string tag;
  RasterGrid g;
  is >> tag >> g.n_rows >> g.n_cols >> g.lon_min >> g.lon_max >> g.lat_min >> g.lat_max;
  if (!is || tag != "ENVGRID") throw std::runtime_error("raster: malformed ENVGRID header");
  const std::size_t n = std::size_t{g.n_rows} * g.n_cols;
  g.values.reserve(n);
  std::string tok;
  while (g.values.size() < n && is >> tok) {
    if (tok == "NA" || tok == "nan" || tok == "NaN") {
      g.values.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const auto v = parse_double(tok);
    if (!v) throw std::runtime_error("raster: bad value '" + tok + "' at cell " +
                                     std::to_string(g.values.size()));
    g.values.push_back(*v);
  }
  if (g.values.size() != n) {
    throw std::runtime_error("raster: expected " + std::to_string(n) + " values, got " +
                             std::to_string(g.values.size()));
  }
  g.validate();
  return g;
}

RasterGrid load_raster(const std::string& path) {
  auto is = open_input(path);
  try {
    return read_raster(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_raster(std::ostream& os, const RasterGrid& g) {
  g.validate();
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "ENVGRID " << g.n_rows << ' ' << g.n_cols << ' ' << g.lon_min << ' ' << g.lon_max << ' '
     << g.lat_min << ' ' << g.lat_max << '\n';
  for (std::uint32_t r = 0; r < g.n_rows; ++r) {
    for (std::uint32_t c = 0; c < g.n_cols; ++c) {
      const double v = g.values[std::size_t{r} * g.n_cols + c];
      if (c) os << ' ';
      if (std::isnan(v)) {
        os << "NA";
      } else {
        os << v;
      }
    }
    os << '\n';
  }
}

void save_raster(const std::string& path, const RasterGrid& g) {
  auto os = open_output(path);
  write_raster(os, g);
}

EnvRasterStack EnvRasterStack::fit(std::vector<RasterGrid> layers) {
  if (layers.empty()) throw std::invalid_argument("at least one environmental layer is required");
  for (const auto& l : layers) {
    l.validate();
    if (!l.same_geometry(layers.front())) {
      throw std::invalid_argument("environmental rasters differ in shape or bounds");
    }
  }
  EnvRasterStack s;
  for (auto& layer : layers) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : layer.values) {
      if (!std::isnan(v)) {
        sum += v;
        ++n;
      }
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    double ss = 0.0;
    for (double v : layer.values) {
      if (!std::isnan(v)) ss += (v - mean) * (v - mean);
    }
    const double sd = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
    for (double& v : layer.values) {
      if (std::isnan(v) || sd == 0.0) {
        v = 0.0;
      } else {
        v = (v - mean) / sd;
      }
    }
    s.means_.push_back(mean);
    s.sds_.push_back(sd);
  }
  s.layers_ = std::move(layers);
  return s;
}

std::vector<double> EnvRasterStack::lookup(const GeoCoord& c) const {
  const std::size_t idx = geometry().index_of(c);
  std::vector<double> out(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) out[i] = layers_[i].values[idx];
  return out;
}

EnvRasterStack load_env_rasters(const std::vector<std::string>& paths) {
  std::vector<RasterGrid> layers;
  for (const auto& p : paths) layers.push_back(load_raster(p));
  return EnvRasterStack::fit(std::move(layers));
}

// ---------------------------------------------------------------------------
// Encoding and sampling

EncodedInput encode_input(const GeoCoord& c, InputMode mode, const EnvRasterStack* env) {
  if (needs_env(mode) && env == nullptr) {
    throw std::invalid_argument("input mode " + to_string(mode) + " needs environmental rasters");
  }
  std::vector<double> values;
  if (needs_env(mode)) values = env->lookup(c);
  if (mode != InputMode::env) {
    const auto enc = encode_coords(c);
    values.insert(values.end(), enc.begin(), enc.end());
  }
  return EncodedInput(mode, std::move(values));
}

Matrix<float> encode_inputs(std::span<const GeoCoord> locs, InputMode mode,
                            const EnvRasterStack* env) {
  if (needs_env(mode) && env == nullptr) {
    throw std::invalid_argument("input mode " + to_string(mode) + " needs environmental rasters");
  }
  const auto dim = input_dim(mode, env ? env->n_layers() : 0);
  Matrix<float> x(dim, static_cast<Eigen::Index>(locs.size()));
  for (std::size_t i = 0; i < locs.size(); ++i) {
    Eigen::Index row = 0;
    if (needs_env(mode)) {
      const std::size_t cell = env->geometry().index_of(locs[i]);
      for (const auto& layer : env->layers()) {
        x(row++, static_cast<Eigen::Index>(i)) = static_cast<float>(layer.values[cell]);
      }
    }
    if (mode != InputMode::env) {
      for (double v : encode_coords(locs[i])) x(row++, static_cast<Eigen::Index>(i)) = static_cast<float>(v);
    }
  }
  return x;
}

void SamplerConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (cap_per_species && *cap_per_species == 0) {
    throw std::invalid_argument("cap_per_species must be at least 1");
  }
}

Batch sample_batch(const ObservationSet& o, const SamplerConfig& cfg, const EnvRasterStack* env,
                   Rng& rng) {
  cfg.validate();
  if (o.empty()) throw std::invalid_argument("cannot sample from an empty observation set");
  Batch b;
  b.targets.n_species = static_cast<std::uint32_t>(o.n_species());
  b.targets.positive.reserve(cfg.batch_size);
  b.locations.reserve(cfg.batch_size);
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    const auto& r = o.records()[uniform_index(rng, o.size())];
    b.targets.positive.push_back(r.species);
    b.locations.push_back(r.location);
  }
  b.inputs = encode_inputs(b.locations, cfg.input_mode, env);
  return b;
}

std::vector<GeoCoord> sample_uniform_locations(std::size_t n, Rng& rng) {
  return sample_uniform_locations(n, rng, -180.0, 180.0, -90.0, 90.0);
}

std::vector<GeoCoord> sample_uniform_locations(std::size_t n, Rng& rng, double lon_min,
                                               double lon_max, double lat_min, double lat_max) {
  if (n == 0) throw std::invalid_argument("need at least one location");
  std::vector<GeoCoord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lon = lon_min + (lon_max - lon_min) * uniform01(rng);
    const double lat = lat_min + (lat_max - lat_min) * uniform01(rng);
    out.emplace_back(lon, lat);
  }
  return out;
}

}  // namespace sinr
