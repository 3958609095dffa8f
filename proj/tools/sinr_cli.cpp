// sinr: train, evaluate and render species range models.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sinr/data.hpp"
#include "sinr/eval.hpp"
#include "sinr/train.hpp"

namespace {

using namespace sinr;

constexpr const char* kToolVersion = "0.1.0";

/// Bad or conflicting flags discovered after parsing; exits with status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small utilities

template <typename T>
std::string shortest(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 init failed");
  }
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// SINR_THREADS caps the worker count; defaults to the hardware concurrency.
std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SINR_THREADS")) {
    std::size_t v = 0;
    const std::string s(env);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v == 0) {
      throw UsageError("SINR_THREADS must be a positive integer");
    }
    n = std::min(n, v);
  }
  return n;
}

/// Scores in kPredictChunk-column pieces spread over worker threads. Chunk
/// boundaries match the sequential path, so the output is identical to
/// predictor.predict(locs) for any thread count.
Matrix<double> parallel_predict(const RangePredictor& predictor, std::span<const GeoCoord> locs) {
  const std::size_t n_chunks = (locs.size() + kPredictChunk - 1) / kPredictChunk;
  const std::size_t n_threads = std::min(worker_count(), std::max<std::size_t>(n_chunks, 1));
  if (n_threads <= 1) return predictor.predict(locs);

  Matrix<double> out(static_cast<Eigen::Index>(predictor.n_species()),
                     static_cast<Eigen::Index>(locs.size()));
  std::vector<std::exception_ptr> errors(n_threads);
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < n_threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t c = t; c < n_chunks; c += n_threads) {
            const std::size_t start = c * kPredictChunk;
            const auto part = locs.subspan(start, std::min(kPredictChunk, locs.size() - start));
            out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(part.size())) =
                predictor.predict(part);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

void report_rejections(const std::string& path, const std::vector<RowRejection>& rejected) {
  constexpr std::size_t kShown = 20;
  for (std::size_t i = 0; i < std::min(kShown, rejected.size()); ++i) {
    std::cerr << path << ":" << rejected[i].line << ": rejected: " << rejected[i].reason << "\n";
  }
  if (rejected.size() > kShown) {
    std::cerr << path << ": " << rejected.size() - kShown << " more rows rejected\n";
  }
}

ObservationSet load_obs_reporting(const std::string& path) {
  auto load = load_observations(path);
  report_rejections(path, load.rejected);
  return std::move(load.observations);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw std::runtime_error(where + ": not a number: " + s);
  return v;
}

/// CSV with lon and lat columns (any order, extras ignored).
std::vector<GeoCoord> load_locations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  const auto col = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error(path + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t lon_col = col("lon"), lat_col = col("lat");
  std::vector<GeoCoord> locs;
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = path + ":" + std::to_string(n);
    if (fields.size() <= std::max(lon_col, lat_col)) throw std::runtime_error(where + ": too few columns");
    const double lon = parse_double(fields[lon_col], where);
    const double lat = parse_double(fields[lat_col], where);
    if (!GeoCoord::is_valid(lon, lat)) throw std::runtime_error(where + ": coordinate out of range");
    locs.emplace_back(lon, lat);
  }
  return locs;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

/// Writes to the file when a path is given, else to stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") file_ = open_out(path);
  }
  std::ostream& get() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// Predictor selection shared by eval, predict and export-raster

struct PredictorOptions {
  std::string model;
  std::string baseline = "none";
  std::string obs;
  std::vector<std::string> env_rasters;
};

void add_predictor_options(CLI::App* cmd, PredictorOptions& o, bool allow_grid = true) {
  cmd->add_option("--model", o.model, "Model file written by `sinr train`");
  auto* b = cmd->add_option("--baseline", o.baseline,
                            allow_grid ? "Predictor: none (the model), lr, or grid:RES"
                                       : "Predictor: none (the model) or lr");
  b->capture_default_str();
  if (allow_grid) cmd->add_option("--obs", o.obs, "Observations for the grid baseline");
  cmd->add_option("--env-raster", o.env_rasters, "Environmental rasters for env input models");
}

/// A predictor plus whatever it borrows.
struct LoadedPredictor {
  std::unique_ptr<EnvRasterStack> env;
  std::unique_ptr<RangePredictor> predictor;
  const SinrPredictor* sinr = nullptr;  // set for model-backed predictors
};

std::optional<std::uint32_t> grid_baseline_resolution(const std::string& baseline) {
  if (baseline.rfind("grid:", 0) != 0) return std::nullopt;
  const std::string res = baseline.substr(5);
  std::uint32_t v = 0;
  const auto r = std::from_chars(res.data(), res.data() + res.size(), v);
  if (r.ec != std::errc() || r.ptr != res.data() + res.size() || v == 0) {
    throw UsageError("--baseline grid:RES needs a positive integer resolution");
  }
  return v;
}

LoadedPredictor load_predictor(const PredictorOptions& o, GridBaselineModel::Rule rule) {
  LoadedPredictor lp;
  if (auto res = grid_baseline_resolution(o.baseline)) {
    if (o.obs.empty()) throw UsageError("--baseline grid:RES needs --obs");
    if (!o.model.empty()) throw UsageError("--model cannot be combined with the grid baseline");
    auto model = GridBaselineModel::fit(load_obs_reporting(o.obs), GridSpec(*res));
    lp.predictor = std::make_unique<GridBaselinePredictor>(std::move(model), rule);
    return lp;
  }
  if (o.baseline != "none" && o.baseline != "lr") {
    throw UsageError("unknown --baseline: " + o.baseline);
  }
  if (o.model.empty()) throw UsageError("--model is required");
  if (!o.obs.empty()) throw UsageError("--obs is only used by the grid baseline");
  Model model = load_model(o.model);
  if (o.baseline == "lr" && model.config.encoder != EncoderKind::identity) {
    throw std::runtime_error(o.model + " is not a logistic-regression model (identity encoder)");
  }
  if (needs_env(model.config.input_mode)) {
    if (o.env_rasters.empty()) {
      throw UsageError("model input " + to_string(model.config.input_mode) + " needs --env-raster");
    }
    lp.env = std::make_unique<EnvRasterStack>(load_env_rasters(o.env_rasters));
  } else if (!o.env_rasters.empty()) {
    throw UsageError("--env-raster given but the model uses coordinates only");
  }
  auto sinr = std::make_unique<SinrPredictor>(std::move(model), lp.env.get());
  lp.sinr = sinr.get();
  lp.predictor = std::move(sinr);
  return lp;
}

std::size_t require_species(const RangePredictor& p, const std::string& id) {
  const auto idx = p.species_index(id);
  if (!idx) throw std::runtime_error("unknown species id: " + id);
  return *idx;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string obs;
  std::string loss = "an-full";
  double lambda = 2048.0;
  std::uint32_t epochs = 10;
  std::size_t batch_size = 2048;
  double lr = 5e-4;
  std::size_t cap_per_species = 0;
  std::uint64_t subsample_seed = 0;
  std::size_t min_count = 0;
  std::string input = "coords";
  std::vector<std::string> env_rasters;
  std::uint64_t seed = 0;
  std::uint32_t hidden_dim = 256;
  std::uint32_t layers = 4;
  double dropout = 0.5;
  std::string encoder = "mlp";
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::string resume;
  std::string from_manifest;
  bool quiet = false;
};

TrainConfig train_config(const TrainOptions& o) {
  TrainConfig c;
  c.epochs = o.epochs;
  c.initial_lr = o.lr;
  c.loss.variant = parse_loss_variant(o.loss);
  c.loss.lambda = o.lambda;
  c.net.hidden_dim = o.hidden_dim;
  c.net.dropout_p = o.dropout;
  if (o.encoder == "identity") {
    c.net.encoder = EncoderKind::identity;
    c.net.n_residual_layers = 0;
  } else {
    c.net.n_residual_layers = o.layers;
  }
  c.sampler.batch_size = o.batch_size;
  if (o.cap_per_species > 0) c.sampler.cap_per_species = o.cap_per_species;
  c.sampler.subsample_seed = o.subsample_seed;
  c.sampler.input_mode = parse_input_mode(o.input);
  c.master_seed = o.seed;
  return c;
}

/// key=value lines; keys named after the train flags can be replayed with
/// `sinr train --from-manifest`, the rest document the run.
void write_manifest(const std::string& path, const TrainOptions& o, const Trainer& t,
                    const std::map<std::string, std::string>& extra) {
  auto os = open_out(path);
  const TrainConfig& c = t.config();
  os << "# sinr training run\n[train]\n";
  os << "obs=" << quoted(o.obs) << "\n";
  os << "loss=" << quoted(to_string(c.loss.variant)) << "\n";
  os << "lambda=" << shortest(c.loss.lambda) << "\n";
  os << "epochs=" << c.epochs << "\n";
  os << "batch-size=" << c.sampler.batch_size << "\n";
  os << "lr=" << shortest(c.initial_lr) << "\n";
  if (c.sampler.cap_per_species) os << "cap-per-species=" << *c.sampler.cap_per_species << "\n";
  os << "subsample-seed=" << c.sampler.subsample_seed << "\n";
  os << "min-count=" << o.min_count << "\n";
  os << "input=" << quoted(to_string(c.sampler.input_mode)) << "\n";
  if (!o.env_rasters.empty()) {
    os << "env-raster=[";
    for (std::size_t i = 0; i < o.env_rasters.size(); ++i) {
      os << (i ? "," : "") << quoted(o.env_rasters[i]);
    }
    os << "]\n";
  }
  os << "seed=" << c.master_seed << "\n";
  os << "hidden-dim=" << c.net.hidden_dim << "\n";
  os << "layers=" << c.net.n_residual_layers << "\n";
  os << "dropout=" << shortest(c.net.dropout_p) << "\n";
  os << "encoder=" << quoted(c.net.encoder == EncoderKind::identity ? "identity" : "mlp") << "\n";
  os << "out=" << quoted(o.out) << "\n";
  for (const auto& [k, v] : extra) os << k << "=" << v << "\n";
  if (!os) throw std::runtime_error("failed writing " + path);
}

/// Digest lines of a manifest ("*_sha256=" keys), for checking a replay.
std::map<std::string, std::string> manifest_digests(const std::string& path) {
  std::ifstream is(path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    if (key.size() > 7 && key.ends_with("_sha256")) out[key] = line.substr(eq + 1);
  }
  return out;
}

int run_train(TrainOptions o, const CLI::App& app, const CLI::App& cmd) {
  if (app.count("--from-manifest") > 0) o.from_manifest = app["--from-manifest"]->as<std::string>();
  if (needs_env(parse_input_mode(o.input)) && o.env_rasters.empty()) {
    throw UsageError("--input " + o.input + " needs --env-raster");
  }
  if (!needs_env(parse_input_mode(o.input)) && !o.env_rasters.empty()) {
    throw UsageError("--env-raster needs --input env or env+coords");
  }
  if (o.encoder == "identity" && cmd.count("--layers") > 0 && o.layers != 0) {
    throw UsageError("--encoder identity takes no --layers");
  }
  const TrainConfig cfg = train_config(o);
  cfg.validate();

  std::map<std::string, std::string> digests;
  digests["obs_sha256"] = quoted(sha256_file(o.obs));
  if (!o.env_rasters.empty()) {
    std::string list = "[";
    for (std::size_t i = 0; i < o.env_rasters.size(); ++i) {
      list += (i ? "," : "") + quoted(sha256_file(o.env_rasters[i]));
    }
    digests["env_raster_sha256"] = list + "]";
  }
  if (!o.from_manifest.empty()) {
    for (const auto& [key, value] : manifest_digests(o.from_manifest)) {
      const auto it = digests.find(key);
      if (it != digests.end() && it->second != value) {
        throw std::runtime_error("input digest " + key + " differs from " + o.from_manifest);
      }
    }
  }

  const auto started = std::chrono::steady_clock::now();
  auto load = load_observations(o.obs);
  report_rejections(o.obs, load.rejected);
  ObservationSet data = std::move(load.observations);
  const std::size_t loaded = data.size();
  if (o.min_count > 0) data = filter_min_count(data, o.min_count);

  std::unique_ptr<EnvRasterStack> env;
  if (!o.env_rasters.empty()) env = std::make_unique<EnvRasterStack>(load_env_rasters(o.env_rasters));

  Trainer trainer = o.resume.empty() ? Trainer(cfg, data, env.get())
                                     : Trainer::resume(o.resume, cfg, data, env.get());
  if (!o.quiet) {
    std::cout << "records " << data.size() << " species " << data.n_species() << " steps/epoch "
              << trainer.steps_per_epoch() << "\n";
  }
  while (!trainer.done()) {
    const std::uint32_t e = trainer.epoch();
    trainer.run_epoch();
    if (!o.checkpoint.empty()) trainer.save_checkpoint(o.checkpoint);
    if (!o.quiet) {
      std::cout << "epoch " << e + 1 << "/" << cfg.epochs << " lr "
                << shortest(lr_at_epoch(cfg.initial_lr, e)) << " loss "
                << shortest(trainer.log().epoch_mean_losses.back()) << std::endl;
    }
  }
  save_model(o.out, trainer.model());
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  const std::string model_digest = sha256_file(o.out);
  auto extra = digests;
  extra["model_sha256"] = quoted(model_digest);
  extra["tool_version"] = quoted(kToolVersion);
  extra["records_loaded"] = std::to_string(loaded);
  extra["rows_rejected"] = std::to_string(load.rejected.size());
  extra["records_used"] = std::to_string(data.size());
  extra["species"] = std::to_string(data.n_species());
  extra["steps_per_epoch"] = std::to_string(trainer.steps_per_epoch());
  extra["wall_seconds"] = shortest(seconds);
  std::string losses = "[";
  for (std::size_t i = 0; i < trainer.log().epoch_mean_losses.size(); ++i) {
    losses += (i ? "," : "") + shortest(trainer.log().epoch_mean_losses[i]);
  }
  extra["epoch_mean_loss"] = losses + "]";
  const std::string manifest = o.manifest.empty() ? o.out + ".manifest" : o.manifest;
  write_manifest(manifest, o, trainer, extra);

  if (!o.quiet) std::cout << "model " << o.out << " sha256 " << model_digest << "\n";
  if (!o.from_manifest.empty()) {
    const auto previous = manifest_digests(o.from_manifest);
    const auto it = previous.find("model_sha256");
    if (it != previous.end()) {
      std::cout << "replay " << (it->second == quoted(model_digest) ? "matches" : "differs from")
                << " the recorded model\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  PredictorOptions predictor;
  std::string out;
  // map
  std::string grid;
  std::string dump_cells;
  // geoprior
  std::string scores;
  // geofeature
  std::vector<std::string> layers;
  std::uint32_t block_cells = 4;
  std::size_t folds = 5;
};

int run_eval_map(const EvalOptions& o) {
  const EvalGrid grid = load_eval_grid(o.grid);
  const auto lp = load_predictor(o.predictor, GridBaselineModel::Rule::ratio);
  const MapReport report = map_task(*lp.predictor, grid);
  for (const auto& s : report.skipped) {
    std::cerr << "skipped species " << s.species_id << ": " << s.reason << "\n";
  }
  Output out(o.out);
  auto& os = out.get();
  os << "species_id,ap,n_present,n_absent\n";
  for (const auto& s : report.species) {
    os << s.species_id << "," << shortest(s.ap) << "," << s.n_present << "," << s.n_absent << "\n";
  }
  os << "MAP," << shortest(report.map) << "," << report.species.size() << ","
     << report.skipped.size() << "\n";

  if (!o.dump_cells.empty()) {
    const auto scores = score_eval_cells(*lp.predictor, grid);
    auto dump = open_out(o.dump_cells);
    dump << "species_id,cell,lon,lat,label,score\n";
    for (std::size_t j = 0; j < grid.labels.size(); ++j) {
      for (std::size_t i = 0; i < grid.labels[j].size(); ++i) {
        const auto [cell, label] = grid.labels[j][i];
        const GeoCoord c = grid.grid.cell_centroid(cell);
        dump << grid.species_ids[j] << "," << cell << "," << shortest(c.lon()) << ","
             << shortest(c.lat()) << "," << int{label} << ","
             << (scores[j].empty() ? std::string() : shortest(scores[j][i])) << "\n";
      }
    }
  }
  return 0;
}

int run_eval_geoprior(const EvalOptions& o) {
  const auto scores = load_classifier_scores(o.scores);
  const auto lp = load_predictor(o.predictor, GridBaselineModel::Rule::indicator);
  const GeoPriorReport r = geo_prior_delta(scores, *lp.predictor);
  Output out(o.out);
  out.get() << "n_images,baseline_top1,weighted_top1,delta\n"
            << r.n_images << "," << shortest(r.baseline_top1) << "," << shortest(r.weighted_top1)
            << "," << shortest(r.delta) << "\n";
  return 0;
}

int run_eval_geofeature(const EvalOptions& o) {
  if (grid_baseline_resolution(o.predictor.baseline)) {
    throw UsageError("the grid baseline has no location features");
  }
  std::vector<RasterGrid> layers;
  std::vector<std::string> names;
  for (const auto& path : o.layers) {
    layers.push_back(load_raster(path));
    names.push_back(std::filesystem::path(path).stem().string());
  }
  const auto split = make_checkerboard_split(layers, names, o.block_cells);
  const auto lp = load_predictor(o.predictor, GridBaselineModel::Rule::ratio);
  const SinrPredictor& model = *lp.sinr;
  const FeatureExtractor extract = [&](std::span<const GeoCoord> locs) {
    return model.features(locs);
  };
  const auto report = geo_feature_task(extract, split);
  Output out(o.out);
  auto& os = out.get();
  os << "layer,r2,alpha\n";
  for (const auto& l : report.layers) os << l.name << "," << shortest(l.r2) << "," << shortest(l.alpha) << "\n";
  os << "mean," << shortest(report.mean_r2) << ",\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict and export-raster

struct PredictOptions {
  PredictorOptions predictor;
  std::string locations;
  std::uint32_t resolution = 0;
  std::string species;
  std::string out;
};

int run_predict(const PredictOptions& o) {
  if (o.locations.empty() == (o.resolution == 0)) {
    throw UsageError("give exactly one of --locations and --resolution");
  }
  const auto lp = load_predictor(o.predictor, GridBaselineModel::Rule::ratio);
  const auto locs =
      o.locations.empty() ? GridSpec(o.resolution).all_centroids() : load_locations(o.locations);
  std::vector<std::size_t> rows;
  std::vector<std::string> ids;
  if (!o.species.empty()) {
    rows.push_back(require_species(*lp.predictor, o.species));
    ids.push_back("score");
  } else if (lp.sinr) {
    ids = lp.sinr->model().species_ids;
    for (std::size_t j = 0; j < ids.size(); ++j) rows.push_back(j);
  } else {
    throw UsageError("--species is required for the grid baseline");
  }
  const Matrix<double> scores = parallel_predict(*lp.predictor, locs);
  Output out(o.out);
  auto& os = out.get();
  os << "lon,lat";
  for (const auto& id : ids) os << "," << id;
  os << "\n";
  for (std::size_t i = 0; i < locs.size(); ++i) {
    os << shortest(locs[i].lon()) << "," << shortest(locs[i].lat());
    for (auto j : rows) {
      const double s = scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
      // Network scores are floats; print them as such so they parse back exactly.
      os << "," << (lp.sinr ? shortest(static_cast<float>(s)) : shortest(s));
    }
    os << "\n";
  }
  return 0;
}

struct ExportOptions {
  PredictorOptions predictor;
  std::string species;
  std::uint32_t resolution = 0;
  std::string out;
  std::string threshold;
};

/// round(255 * score) with halves rounded up.
int gray_level(double score) {
  return static_cast<int>(std::floor(255.0 * std::clamp(score, 0.0, 1.0) + 0.5));
}

std::optional<double> resolve_threshold(const std::string& spec, const RangePredictor& predictor,
                                        const std::string& species) {
  if (spec.empty()) return std::nullopt;
  if (spec.rfind("fixed:", 0) == 0) {
    const double t = parse_double(spec.substr(6), "--binary-threshold");
    if (!(t >= 0.0 && t <= 1.0)) throw UsageError("--binary-threshold fixed:F needs F in [0, 1]");
    return t;
  }
  if (spec.rfind("f1:", 0) == 0) {
    const EvalGrid grid = load_eval_grid(spec.substr(3));
    const auto it = std::find(grid.species_ids.begin(), grid.species_ids.end(), species);
    if (it == grid.species_ids.end()) {
      throw std::runtime_error("species " + species + " has no labels in " + spec.substr(3));
    }
    const auto j = static_cast<std::size_t>(it - grid.species_ids.begin());
    std::vector<GeoCoord> cells;
    std::vector<std::uint8_t> labels;
    for (const auto& [cell, label] : grid.labels[j]) {
      cells.push_back(grid.grid.cell_centroid(cell));
      labels.push_back(label);
    }
    const auto row = static_cast<Eigen::Index>(require_species(predictor, species));
    const Matrix<double> scores = parallel_predict(predictor, cells);
    std::vector<double> s(cells.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = scores(row, static_cast<Eigen::Index>(i));
    return f1_max_threshold(s, labels);
  }
  throw UsageError("--binary-threshold must be f1:EVALGRID or fixed:F");
}

int run_export(const ExportOptions& o) {
  const auto lp = load_predictor(o.predictor, GridBaselineModel::Rule::ratio);
  const auto row = static_cast<Eigen::Index>(require_species(*lp.predictor, o.species));
  const auto threshold = resolve_threshold(o.threshold, *lp.predictor, o.species);

  const GridSpec grid(o.resolution);
  const auto centroids = grid.all_centroids();
  const Matrix<double> scores = parallel_predict(*lp.predictor, centroids);

  auto pgm = open_out(o.out + ".pgm");
  auto csv = open_out(o.out + ".csv");
  pgm << "P2\n# species " << o.species;
  if (threshold) pgm << " threshold " << shortest(*threshold);
  pgm << "\n" << grid.n_lon() << " " << grid.n_lat() << "\n255\n";
  csv << "lon,lat,score" << (threshold ? ",present" : "") << "\n";
  // Image rows run north to south; grid rows run south to north.
  for (std::uint32_t r = grid.n_lat(); r-- > 0;) {
    for (std::uint32_t c = 0; c < grid.n_lon(); ++c) {
      const std::size_t cell = std::size_t{r} * grid.n_lon() + c;
      const double s = scores(row, static_cast<Eigen::Index>(cell));
      const bool present = threshold && s >= *threshold;
      pgm << (c ? " " : "") << (threshold ? (present ? 255 : 0) : gray_level(s));
      csv << shortest(centroids[cell].lon()) << "," << shortest(centroids[cell].lat()) << ","
          << (lp.sinr ? shortest(static_cast<float>(s)) : shortest(s));
      if (threshold) csv << "," << int{present};
      csv << "\n";
    }
    pgm << "\n";
  }
  if (!pgm || !csv) throw std::runtime_error("failed writing " + o.out);
  if (threshold) std::cout << "threshold " << shortest(*threshold) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Species range models from presence-only observations"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  TrainOptions t;
  auto* train = app.add_subcommand("train", "Train a model and write it with a run manifest");
  train->add_option("--obs", t.obs, "Observation CSV (species_id,lon,lat)")->required()->check(CLI::ExistingFile);
  train->add_option("--loss", t.loss, "Loss variant")
      ->check(CLI::IsMember({"an-ssdl", "an-slds", "an-full", "me-ssdl", "me-slds", "me-full"}))
      ->capture_default_str();
  train->add_option("--lambda", t.lambda, "Positive weight")->capture_default_str();
  train->add_option("--epochs", t.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch-size", t.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", t.lr, "Initial learning rate, decayed by 0.98 per epoch")->capture_default_str();
  train->add_option("--cap-per-species", t.cap_per_species, "Keep at most N records per species")
      ->check(CLI::PositiveNumber);
  train->add_option("--subsample-seed", t.subsample_seed)->capture_default_str();
  train->add_option("--min-count", t.min_count, "Drop species with fewer records");
  train->add_option("--input", t.input)
      ->check(CLI::IsMember({"coords", "env", "env+coords"}))
      ->capture_default_str();
  train->add_option("--env-raster", t.env_rasters, "ENVGRID raster files")->check(CLI::ExistingFile);
  train->add_option("--seed", t.seed, "Master seed")->capture_default_str();
  train->add_option("--hidden-dim", t.hidden_dim)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--layers", t.layers, "Residual blocks")->capture_default_str();
  train->add_option("--dropout", t.dropout)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  train->add_option("--encoder", t.encoder, "mlp, or identity for logistic regression")
      ->check(CLI::IsMember({"mlp", "identity"}))
      ->capture_default_str();
  train->add_option("--out", t.out, "Model file")->required();
  train->add_option("--manifest", t.manifest, "Manifest path (default: OUT.manifest)");
  train->add_option("--checkpoint", t.checkpoint, "Write a checkpoint after every epoch");
  train->add_option("--resume", t.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--quiet", t.quiet);
  // Manifests are config files for the train section; fallthrough lets the
  // option follow the subcommand name.
  app.set_config("--from-manifest", "", "Replay the settings of a training manifest; flags override");
  train->fallthrough();

  EvalOptions e;
  auto* eval = app.add_subcommand("eval", "Score a model or baseline");
  eval->require_subcommand(1);
  auto* eval_map = eval->add_subcommand("map", "Presence-absence MAP over an EVALGRID file");
  add_predictor_options(eval_map, e.predictor);
  eval_map->add_option("--grid", e.grid, "EVALGRID file")->required()->check(CLI::ExistingFile);
  eval_map->add_option("--dump-cells", e.dump_cells, "Write per-cell scores to this CSV");
  eval_map->add_option("--out", e.out, "Report CSV (default stdout)");
  auto* eval_geo = eval->add_subcommand("geoprior", "Top-1 change from reweighting classifier scores");
  add_predictor_options(eval_geo, e.predictor);
  eval_geo->add_option("--scores", e.scores, "Classifier score CSV")->required()->check(CLI::ExistingFile);
  eval_geo->add_option("--out", e.out, "Report CSV (default stdout)");
  auto* eval_feat = eval->add_subcommand("geofeature", "Ridge probe of location features");
  add_predictor_options(eval_feat, e.predictor, false);
  eval_feat->add_option("--layer", e.layers, "ENVGRID target rasters")->required()->check(CLI::ExistingFile);
  eval_feat->add_option("--block-cells", e.block_cells, "Checkerboard block size in cells")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval_feat->add_option("--out", e.out, "Report CSV (default stdout)");

  PredictOptions p;
  auto* predict = app.add_subcommand("predict", "Score locations");
  add_predictor_options(predict, p.predictor);
  predict->add_option("--locations", p.locations, "CSV with lon,lat columns")->check(CLI::ExistingFile);
  predict->add_option("--resolution", p.resolution, "Score every cell centroid of this grid");
  predict->add_option("--species", p.species, "Only this species");
  predict->add_option("--out", p.out, "Output CSV (default stdout)");

  ExportOptions x;
  auto* exp = app.add_subcommand("export-raster", "Render one species as a graymap plus CSV");
  add_predictor_options(exp, x.predictor);
  exp->add_option("--species", x.species)->required();
  exp->add_option("--resolution", x.resolution)->required()->check(CLI::PositiveNumber);
  exp->add_option("--out", x.out, "Output prefix; writes PREFIX.pgm and PREFIX.csv")->required();
  exp->add_option("--binary-threshold", x.threshold, "f1:EVALGRID or fixed:F");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(t, app, *train);
    if (*eval_map) return run_eval_map(e);
    if (*eval_geo) return run_eval_geoprior(e);
    if (*eval_feat) return run_eval_geofeature(e);
    if (*predict) return run_predict(p);
    if (*exp) return run_export(x);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
