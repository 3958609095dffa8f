#include "sinr/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sinr {

// ---------------------------------------------------------------------------
// Ranking metrics

namespace {

void check_scores_labels(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  for (auto l : labels) {
    if (l > 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scores_labels(scores, labels);
  const auto n_pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
  if (n_pos == 0) throw std::invalid_argument("average precision needs at least one positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(n_pos);
}

double f1_score_at(std::span<const double> scores, std::span<const std::uint8_t> labels,
                   double threshold) {
  check_scores_labels(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted && labels[i]) ++tp;
    if (predicted && !labels[i]) ++fp;
    if (!predicted && labels[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double f1_max_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scores_labels(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  if (n_pos == 0 || n_pos == labels.size()) {
    throw std::invalid_argument("F1 threshold needs both positive and negative labels");
  }
  // Ascending scores with a running count of positives strictly below each position.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> sorted(order.size());
  std::vector<std::size_t> pos_below(order.size() + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted[i] = scores[order[i]];
    pos_below[i + 1] = pos_below[i] + labels[order[i]];
  }

  std::vector<double> candidates{0.0};
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] != sorted[i - 1]) candidates.push_back(0.5 * (sorted[i - 1] + sorted[i]));
  }
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());

  double best_t = candidates.front();
  double best_f1 = -1.0;
  for (double t : candidates) {
    const auto idx = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    const std::size_t predicted = sorted.size() - idx;
    const std::size_t tp = n_pos - pos_below[idx];
    const double f1 = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + n_pos);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

// ---------------------------------------------------------------------------
// Predictors

namespace {

std::unordered_map<std::string, std::size_t> make_index(const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  return index;
}

}  // namespace

SinrPredictor::SinrPredictor(Model model, const EnvRasterStack* env)
    : model_(std::move(model)), env_(env), index_(make_index(model_.species_ids)) {
  if (needs_env(model_.config.input_mode)) {
    if (env_ == nullptr) {
      throw std::invalid_argument("model input " + to_string(model_.config.input_mode) +
                                  " needs environmental rasters");
    }
    if (input_dim(model_.config.input_mode, env_->n_layers()) != model_.config.input_dim) {
      throw std::invalid_argument("environmental raster count does not match the model input");
    }
  }
}

std::optional<std::size_t> SinrPredictor::species_index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Matrix<double> SinrPredictor::predict(std::span<const GeoCoord> locs) const {
  Matrix<double> out(model_.config.n_species, static_cast<Eigen::Index>(locs.size()));
  for (std::size_t start = 0; start < locs.size(); start += kPredictChunk) {
    const auto chunk = locs.subspan(start, std::min(kPredictChunk, locs.size() - start));
    const Matrix<float> x = encode_inputs(chunk, model_.config.input_mode, env_);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(chunk.size())) =
        sinr::predict(model_.params, model_.config, x).cast<double>();
  }
  return out;
}

Matrix<double> SinrPredictor::features(std::span<const GeoCoord> locs) const {
  Matrix<double> out(static_cast<Eigen::Index>(locs.size()), model_.config.feature_dim());
  for (std::size_t start = 0; start < locs.size(); start += kPredictChunk) {
    const auto chunk = locs.subspan(start, std::min(kPredictChunk, locs.size() - start));
    const Matrix<float> x = encode_inputs(chunk, model_.config.input_mode, env_);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(chunk.size())) =
        sinr::features(model_.params, model_.config, x).cast<double>().transpose();
  }
  return out;
}

GridBaselineModel GridBaselineModel::fit(const ObservationSet& o, const GridSpec& grid) {
  GridBaselineModel m(grid);
  m.species_ids_ = o.species_ids();
  m.max_counts_.assign(o.n_species(), 0);
  const std::uint64_t n_species = o.n_species();
  m.counts_.reserve(std::min<std::size_t>(o.size(), grid.n_cells() * std::max<std::size_t>(1, o.n_species())));
  for (const auto& r : o.records()) {
    const std::uint64_t key = grid.cell_of(r.location) * n_species + r.species;
    const std::uint32_t c = ++m.counts_[key];
    m.max_counts_[r.species] = std::max(m.max_counts_[r.species], c);
  }
  return m;
}

std::uint32_t GridBaselineModel::count(std::size_t cell, std::size_t species) const {
  if (species >= species_ids_.size()) throw std::out_of_range("species index out of range");
  auto it = counts_.find(static_cast<std::uint64_t>(cell) * species_ids_.size() + species);
  return it == counts_.end() ? 0 : it->second;
}

double GridBaselineModel::predict(const GeoCoord& c, std::size_t species, Rule rule) const {
  if (species >= species_ids_.size() || max_counts_[species] == 0) return 0.0;
  const std::uint32_t n = count(grid_.cell_of(c), species);
  if (rule == Rule::indicator) return n > 0 ? 1.0 : 0.0;
  return static_cast<double>(n) / static_cast<double>(max_counts_[species]);
}

GridBaselinePredictor::GridBaselinePredictor(GridBaselineModel model, GridBaselineModel::Rule rule)
    : model_(std::move(model)), rule_(rule), index_(make_index(model_.species_ids())) {}

std::optional<std::size_t> GridBaselinePredictor::species_index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Matrix<double> GridBaselinePredictor::predict(std::span<const GeoCoord> locs) const {
  Matrix<double> out(static_cast<Eigen::Index>(n_species()), static_cast<Eigen::Index>(locs.size()));
  for (std::size_t i = 0; i < locs.size(); ++i) {
    for (std::size_t s = 0; s < n_species(); ++s) {
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = model_.predict(locs[i], s, rule_);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Eval grid

EvalGrid read_eval_grid(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> std::runtime_error {
    return std::runtime_error("evalgrid line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  std::istringstream header(line);
  std::string tag;
  long long resolution = 0;
  long long declared = 0;
  if (!(header >> tag >> resolution >> declared) || tag != "EVALGRID" || resolution <= 0 || declared < 0) {
    throw fail("expected header 'EVALGRID resolution S'");
  }
  EvalGrid g;
  g.grid = GridSpec(static_cast<std::uint32_t>(resolution));
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::map<std::size_t, std::uint8_t>> cells;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream row(line);
    std::string id;
    if (!(row >> id)) continue;
    long long cell = -1;
    int label = -1;
    std::string extra;
    if (!(row >> cell >> label) || (row >> extra)) throw fail("expected 'species_id cell_index label'");
    if (cell < 0 || static_cast<std::size_t>(cell) >= g.grid.n_cells()) throw fail("cell index out of range");
    if (label != 0 && label != 1) throw fail("label must be 0 or 1");
    auto [it, inserted] = index.emplace(id, g.species_ids.size());
    if (inserted) {
      g.species_ids.push_back(id);
      cells.emplace_back();
    }
    if (!cells[it->second].emplace(static_cast<std::size_t>(cell), static_cast<std::uint8_t>(label)).second) {
      throw fail("duplicate entry for species " + id + " cell " + std::to_string(cell));
    }
  }
  if (static_cast<long long>(g.species_ids.size()) != declared) {
    throw std::runtime_error("evalgrid: header declares " + std::to_string(declared) +
                             " species but the file lists " + std::to_string(g.species_ids.size()));
  }
  for (auto& m : cells) g.labels.emplace_back(m.begin(), m.end());
  return g;
}

EvalGrid load_eval_grid(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_eval_grid(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_eval_grid(std::ostream& os, const EvalGrid& g) {
  os << "EVALGRID " << g.grid.resolution() << ' ' << g.species_ids.size() << '\n';
  for (std::size_t s = 0; s < g.species_ids.size(); ++s) {
    for (const auto& [cell, label] : g.labels[s]) {
      os << g.species_ids[s] << ' ' << cell << ' ' << int{label} << '\n';
    }
  }
}

std::vector<std::vector<double>> score_eval_cells(const RangePredictor& predictor,
                                                  const EvalGrid& grid) {
  std::map<std::size_t, Eigen::Index> column;
  for (const auto& species : grid.labels) {
    for (const auto& entry : species) column.emplace(entry.first, 0);
  }
  std::vector<GeoCoord> locs;
  locs.reserve(column.size());
  for (auto& [cell, col] : column) {
    col = static_cast<Eigen::Index>(locs.size());
    locs.push_back(grid.grid.cell_centroid(cell));
  }
  const Matrix<double> scores = predictor.predict(locs);

  std::vector<std::vector<double>> out(grid.species_ids.size());
  for (std::size_t s = 0; s < grid.species_ids.size(); ++s) {
    const auto idx = predictor.species_index(grid.species_ids[s]);
    if (!idx) continue;
    for (const auto& [cell, label] : grid.labels[s]) {
      out[s].push_back(scores(static_cast<Eigen::Index>(*idx), column.at(cell)));
    }
  }
  return out;
}

MapReport map_task(const RangePredictor& predictor, const EvalGrid& grid) {
  const auto scores = score_eval_cells(predictor, grid);
  MapReport report;
  double sum = 0.0;
  for (std::size_t s = 0; s < grid.species_ids.size(); ++s) {
    const auto& id = grid.species_ids[s];
    std::vector<std::uint8_t> labels;
    for (const auto& entry : grid.labels[s]) labels.push_back(entry.second);
    const auto n_present = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
    const auto n_absent = labels.size() - n_present;
    if (!predictor.species_index(id)) {
      report.skipped.push_back({id, "not in model"});
      continue;
    }
    if (n_present == 0 || n_absent == 0) {
      report.skipped.push_back({id, n_present == 0 ? "no present cells" : "no absent cells"});
      continue;
    }
    const double ap = average_precision(scores[s], labels);
    report.species.push_back({id, ap, n_present, n_absent});
    sum += ap;
  }
  if (report.species.empty()) throw std::runtime_error("no evaluable species");
  report.map = sum / static_cast<double>(report.species.size());
  return report;
}

// ---------------------------------------------------------------------------
// Geo prior

namespace {

std::optional<long long> as_integer(const std::string& s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<double> as_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Index of the best (score, id) pair: highest score, then smallest species id.
template <typename ScoreOf>
std::size_t top1(const ScoredImage& img, ScoreOf score_of) {
  std::size_t best = 0;
  double best_score = score_of(0);
  for (std::size_t k = 1; k < img.scores.size(); ++k) {
    const double s = score_of(k);
    if (s > best_score || (s == best_score && species_id_less(img.scores[k].first, img.scores[best].first))) {
      best = k;
      best_score = s;
    }
  }
  return best;
}

}  // namespace

bool species_id_less(const std::string& a, const std::string& b) {
  const auto ia = as_integer(a);
  const auto ib = as_integer(b);
  if (ia && ib) return *ia < *ib;
  return a < b;
}

ClassifierScoreSet read_classifier_scores(std::istream& is) {
  ClassifierScoreSet out;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    return std::runtime_error("scores line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (trimmed(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trimmed(f));
    if (line_no == 1 && !fields.empty() && fields[0] == "image_id") continue;
    if (fields.size() < 5) throw fail("expected image_id,true_species_id,lon,lat and at least one score");
    const auto lon = as_double(fields[2]);
    const auto lat = as_double(fields[3]);
    if (!lon || !lat || !GeoCoord::is_valid(*lon, *lat)) throw fail("invalid coordinate");
    ScoredImage img{fields[0], fields[1], GeoCoord(*lon, *lat), {}};
    for (std::size_t k = 4; k < fields.size(); ++k) {
      if (fields[k].empty()) continue;
      const auto colon = fields[k].rfind(':');
      if (colon == std::string::npos || colon == 0) throw fail("expected species_id:score, got '" + fields[k] + "'");
      const auto score = as_double(std::string_view(fields[k]).substr(colon + 1));
      if (!score || *score < 0.0 || *score > 1.0) throw fail("score must be a number in [0, 1]");
      img.scores.emplace_back(fields[k].substr(0, colon), *score);
    }
    if (img.scores.empty()) throw fail("no scores");
    out.push_back(std::move(img));
  }
  return out;
}

ClassifierScoreSet load_classifier_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_classifier_scores(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

GeoPriorReport geo_prior_delta(const ClassifierScoreSet& scores, const RangePredictor& predictor) {
  if (scores.empty()) throw std::invalid_argument("empty classifier score set");
  constexpr std::size_t kChunk = 1024;
  std::size_t correct_raw = 0;
  std::size_t correct_weighted = 0;
  for (std::size_t start = 0; start < scores.size(); start += kChunk) {
    const std::size_t end = std::min(scores.size(), start + kChunk);
    std::vector<GeoCoord> locs;
    for (std::size_t i = start; i < end; ++i) locs.push_back(scores[i].location);
    const Matrix<double> prior = predictor.predict(locs);
    for (std::size_t i = start; i < end; ++i) {
      const ScoredImage& img = scores[i];
      if (img.scores.empty()) throw std::invalid_argument("image " + img.image_id + " has no scores");
      std::vector<double> weight(img.scores.size(), 1.0);
      for (std::size_t k = 0; k < img.scores.size(); ++k) {
        if (auto idx = predictor.species_index(img.scores[k].first)) {
          weight[k] = prior(static_cast<Eigen::Index>(*idx), static_cast<Eigen::Index>(i - start));
        }
      }
      const auto raw = top1(img, [&](std::size_t k) { return img.scores[k].second; });
      const auto weighted = top1(img, [&](std::size_t k) { return img.scores[k].second * weight[k]; });
      correct_raw += img.scores[raw].first == img.true_species;
      correct_weighted += img.scores[weighted].first == img.true_species;
    }
  }
  GeoPriorReport r;
  r.n_images = scores.size();
  const double n = static_cast<double>(scores.size());
  r.baseline_top1 = 100.0 * static_cast<double>(correct_raw) / n;
  r.weighted_top1 = 100.0 * static_cast<double>(correct_weighted) / n;
  r.delta = r.weighted_top1 - r.baseline_top1;
  return r;
}

// ---------------------------------------------------------------------------
// Ridge regression

Vector<double> RidgeFit::predict(const Matrix<double>& x) const {
  Vector<double> out = x * weights;
  out.array() += intercept;
  return out;
}

namespace {

Vector<double> solve_ridge(const Matrix<double>& x, const Vector<double>& y, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("ridge alpha must be positive");
  if (x.rows() != y.size()) throw std::invalid_argument("ridge: X and y differ in row count");
  Matrix<double> gram = x.transpose() * x;
  gram.diagonal().array() += alpha;
  Eigen::LDLT<Matrix<double>> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("ridge: singular system");
  return ldlt.solve(x.transpose() * y);
}

}  // namespace

RidgeFit ridge_fit(const Matrix<double>& x, const Vector<double>& y, double alpha) {
  if (x.rows() == 0) throw std::invalid_argument("ridge: no rows");
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Matrix<double> xc = x.rowwise() - x_mean;
  const Vector<double> yc = y.array() - y_mean;
  RidgeFit fit;
  fit.alpha = alpha;
  fit.weights = solve_ridge(xc, yc, alpha);
  fit.intercept = y_mean - x_mean.dot(fit.weights);
  return fit;
}

RidgeFit ridge_fit_no_intercept(const Matrix<double>& x, const Vector<double>& y, double alpha) {
  RidgeFit fit;
  fit.alpha = alpha;
  fit.weights = solve_ridge(x, y, alpha);
  return fit;
}

double r2_score(const Vector<double>& y, const Vector<double>& y_hat) {
  if (y.size() != y_hat.size() || y.size() == 0) throw std::invalid_argument("r2: size mismatch");
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  const double ss_res = (y - y_hat).squaredNorm();
  if (ss_tot == 0.0) return 0.0;
  return 1.0 - ss_res / ss_tot;
}

RidgeCvResult ridge_cv(const Matrix<double>& x, const Vector<double>& y,
                       std::span<const double> alphas, std::size_t folds) {
  if (alphas.empty()) throw std::invalid_argument("ridge_cv: no candidate alphas");
  const auto n = static_cast<std::size_t>(x.rows());
  if (folds < 2 || n < folds) throw std::invalid_argument("ridge_cv: need at least as many rows as folds");
  RidgeCvResult out;
  for (double alpha : alphas) {
    double total = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t lo = f * n / folds;
      const std::size_t hi = (f + 1) * n / folds;
      const auto n_val = static_cast<Eigen::Index>(hi - lo);
      const auto n_fit = static_cast<Eigen::Index>(n) - n_val;
      Matrix<double> x_fit(n_fit, x.cols());
      Vector<double> y_fit(n_fit);
      x_fit << x.topRows(static_cast<Eigen::Index>(lo)), x.bottomRows(static_cast<Eigen::Index>(n - hi));
      y_fit << y.head(static_cast<Eigen::Index>(lo)), y.tail(static_cast<Eigen::Index>(n - hi));
      const RidgeFit fit = ridge_fit(x_fit, y_fit, alpha);
      const Matrix<double> x_val = x.middleRows(static_cast<Eigen::Index>(lo), n_val);
      total += r2_score(y.segment(static_cast<Eigen::Index>(lo), n_val), fit.predict(x_val));
    }
    out.cv_r2.push_back(total / static_cast<double>(folds));
  }
  // Strictly better wins, so among equal scores the smaller alpha is kept.
  std::vector<std::size_t> order(alphas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alphas[a] < alphas[b]; });
  std::size_t best = order.front();
  for (auto i : order) {
    if (out.cv_r2[i] > out.cv_r2[best]) best = i;
  }
  out.fit = ridge_fit(x, y, alphas[best]);
  return out;
}

// ---------------------------------------------------------------------------
// Geo feature probe

GeoFeatureSplit make_checkerboard_split(const std::vector<RasterGrid>& layers,
                                        std::vector<std::string> names, std::uint32_t block_cells) {
  if (layers.empty()) throw std::invalid_argument("no target layers");
  if (block_cells == 0) throw std::invalid_argument("block size must be positive");
  if (names.size() != layers.size()) throw std::invalid_argument("one name per layer required");
  const RasterGrid& g = layers.front();
  for (const auto& l : layers) {
    l.validate();
    if (!l.same_geometry(g)) throw std::invalid_argument("target layers differ in geometry");
  }
  GeoFeatureSplit split;
  split.layer_names = std::move(names);
  std::vector<std::size_t> train_cells, test_cells;
  for (std::uint32_t r = 0; r < g.n_rows; ++r) {
    for (std::uint32_t c = 0; c < g.n_cols; ++c) {
      const std::size_t idx = std::size_t{r} * g.n_cols + c;
      const bool complete = std::all_of(layers.begin(), layers.end(),
                                        [&](const RasterGrid& l) { return !std::isnan(l.values[idx]); });
      if (!complete) continue;
      ((r / block_cells + c / block_cells) % 2 == 0 ? train_cells : test_cells).push_back(idx);
    }
  }
  auto fill = [&](const std::vector<std::size_t>& cells, std::vector<GeoCoord>& locs, Matrix<double>& t) {
    t.resize(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(layers.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      locs.push_back(g.cell_center(cells[i]));
      for (std::size_t l = 0; l < layers.size(); ++l) {
        t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = layers[l].values[cells[i]];
      }
    }
  };
  fill(train_cells, split.train_locations, split.train_targets);
  fill(test_cells, split.test_locations, split.test_targets);
  return split;
}

GeoFeatureReport geo_feature_task(const FeatureExtractor& extract, const GeoFeatureSplit& split,
                                  std::span<const double> alphas) {
  if (split.train_locations.empty() || split.test_locations.empty()) {
    throw std::invalid_argument("geo feature split has an empty side");
  }
  const auto n_layers = static_cast<std::size_t>(split.train_targets.cols());
  if (split.test_targets.cols() != split.train_targets.cols() || split.layer_names.size() != n_layers) {
    throw std::invalid_argument("geo feature split layers are inconsistent");
  }
  Matrix<double> x_train = extract(split.train_locations);
  Matrix<double> x_test = extract(split.test_locations);
  if (x_train.cols() != x_test.cols()) throw std::runtime_error("feature extractor changed width");

  for (Eigen::Index j = 0; j < x_train.cols(); ++j) {
    const double lo = x_train.col(j).minCoeff();
    const double hi = x_train.col(j).maxCoeff();
    if (hi > lo) {
      x_train.col(j) = (x_train.col(j).array() - lo) / (hi - lo);
      x_test.col(j) = (x_test.col(j).array() - lo) / (hi - lo);
    } else {
      x_train.col(j).setZero();
      x_test.col(j).setZero();
    }
  }

  GeoFeatureReport report;
  double sum = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto col = static_cast<Eigen::Index>(l);
    const RidgeCvResult cv = ridge_cv(x_train, split.train_targets.col(col), alphas);
    const double r2 = r2_score(split.test_targets.col(col), cv.fit.predict(x_test));
    report.layers.push_back({split.layer_names[l], r2, cv.fit.alpha});
    sum += r2;
  }
  report.mean_r2 = sum / static_cast<double>(n_layers);
  return report;
}

}  // namespace sinr
