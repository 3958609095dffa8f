#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sinr/data.hpp"
#include "sinr/geo.hpp"
#include "sinr/net.hpp"

namespace sinr {

// ---------------------------------------------------------------------------
// Ranking metrics

/// Average precision of a score ranking. Ranks by descending score; equal
/// scores keep their input order (stable). Throws when there is no positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Threshold maximizing F1 for the rule score >= threshold. Candidates are 0,
/// 1 and the midpoints between consecutive distinct scores; ties go to the
/// smallest threshold. Needs at least one positive and one negative label.
double f1_max_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels);
double f1_score_at(std::span<const double> scores, std::span<const std::uint8_t> labels,
                   double threshold);

// ---------------------------------------------------------------------------
// Predictors

/// Anything that scores species presence at locations.
class RangePredictor {
 public:
  virtual ~RangePredictor() = default;
  virtual std::size_t n_species() const = 0;
  virtual std::optional<std::size_t> species_index(const std::string& id) const = 0;
  /// n_species x locs.size() presence scores in [0, 1].
  virtual Matrix<double> predict(std::span<const GeoCoord> locs) const = 0;
};

/// Locations are encoded and evaluated in chunks of this many columns.
inline constexpr std::size_t kPredictChunk = 4096;

/// Eval-mode network predictions; env must be given for env input modes.
class SinrPredictor : public RangePredictor {
 public:
  explicit SinrPredictor(Model model, const EnvRasterStack* env = nullptr);

  std::size_t n_species() const override { return model_.config.n_species; }
  std::optional<std::size_t> species_index(const std::string& id) const override;
  Matrix<double> predict(std::span<const GeoCoord> locs) const override;
  /// Location-encoder output, locs.size() x feature_dim.
  Matrix<double> features(std::span<const GeoCoord> locs) const;
  const Model& model() const { return model_; }

 private:
  Model model_;
  const EnvRasterStack* env_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-cell observation counts n_wj for the discretized-grid baseline.
class GridBaselineModel {
 public:
  static GridBaselineModel fit(const ObservationSet& o, const GridSpec& grid);

  enum class Rule {
    ratio,      // n_wj / max_w' n_w'j, for presence-absence ranking
    indicator,  // 1[n_wj > 0], for reweighting classifier scores
  };

  const GridSpec& grid() const { return grid_; }
  const std::vector<std::string>& species_ids() const { return species_ids_; }
  std::uint32_t count(std::size_t cell, std::size_t species) const;
  std::uint32_t max_count(std::size_t species) const { return max_counts_.at(species); }
  /// Species never observed predict 0 under both rules.
  double predict(const GeoCoord& c, std::size_t species, Rule rule) const;

 private:
  explicit GridBaselineModel(GridSpec grid) : grid_(grid) {}

  GridSpec grid_;
  std::vector<std::string> species_ids_;
  std::unordered_map<std::uint64_t, std::uint32_t> counts_;  // key: cell * n_species + species
  std::vector<std::uint32_t> max_counts_;
};

class GridBaselinePredictor : public RangePredictor {
 public:
  GridBaselinePredictor(GridBaselineModel model, GridBaselineModel::Rule rule);

  std::size_t n_species() const override { return model_.species_ids().size(); }
  std::optional<std::size_t> species_index(const std::string& id) const override;
  Matrix<double> predict(std::span<const GeoCoord> locs) const override;

 private:
  GridBaselineModel model_;
  GridBaselineModel::Rule rule_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Presence-absence MAP

/// Labels per species over the cells of an equal-angle grid. Cells not listed
/// for a species are invalid and excluded from its AP.
struct EvalGrid {
  GridSpec grid{1};
  std::vector<std::string> species_ids;
  /// Per species: (cell index, label 0/1), sorted by cell.
  std::vector<std::vector<std::pair<std::size_t, std::uint8_t>>> labels;
};

/// "EVALGRID resolution S" header, then "species_id cell_index label" lines.
EvalGrid read_eval_grid(std::istream& is);
EvalGrid load_eval_grid(const std::string& path);
void write_eval_grid(std::ostream& os, const EvalGrid& g);

struct SpeciesAp {
  std::string species_id;
  double ap = 0.0;
  std::size_t n_present = 0;
  std::size_t n_absent = 0;
};

struct SkippedSpecies {
  std::string species_id;
  std::string reason;
};

struct MapReport {
  double map = 0.0;
  std::vector<SpeciesAp> species;  // in eval-grid order
  std::vector<SkippedSpecies> skipped;
};

/// Scores every valid cell centroid and averages per-species AP. Species need
/// at least one present and one absent cell and must be known to the predictor.
MapReport map_task(const RangePredictor& predictor, const EvalGrid& grid);

/// Per-species scores at the grid's valid cells, in the same order as grid.labels.
std::vector<std::vector<double>> score_eval_cells(const RangePredictor& predictor,
                                                  const EvalGrid& grid);

// ---------------------------------------------------------------------------
// Geo prior

struct ScoredImage {
  std::string image_id;
  std::string true_species;
  GeoCoord location;
  std::vector<std::pair<std::string, double>> scores;
};

using ClassifierScoreSet = std::vector<ScoredImage>;

/// CSV rows "image_id,true_species_id,lon,lat,species:score,..."; an optional
/// header line starting with image_id is skipped.
ClassifierScoreSet read_classifier_scores(std::istream& is);
ClassifierScoreSet load_classifier_scores(const std::string& path);

struct GeoPriorReport {
  std::size_t n_images = 0;
  double baseline_top1 = 0.0;  // percent
  double weighted_top1 = 0.0;  // percent
  double delta = 0.0;          // percentage points
};

/// Reweights each image's classifier scores by the predictor's presence score
/// at the image location (1.0 for species the predictor does not know) and
/// compares top-1 accuracy. Ties pick the smaller species id (numeric when
/// both ids are integers, lexicographic otherwise).
GeoPriorReport geo_prior_delta(const ClassifierScoreSet& scores, const RangePredictor& predictor);

bool species_id_less(const std::string& a, const std::string& b);

// ---------------------------------------------------------------------------
// Ridge regression and the feature-transfer probe

struct RidgeFit {
  Vector<double> weights;
  double intercept = 0.0;
  double alpha = 0.0;

  Vector<double> predict(const Matrix<double>& x) const;
};

/// argmin ||y - Xw - b||^2 + alpha ||w||^2 with an unpenalized intercept,
/// solved on centered data. x is n x d.
RidgeFit ridge_fit(const Matrix<double>& x, const Vector<double>& y, double alpha);
/// Same objective without an intercept: (X'X + alpha I)^-1 X'y.
RidgeFit ridge_fit_no_intercept(const Matrix<double>& x, const Vector<double>& y, double alpha);

/// 1 - SS_res / SS_tot; 0 when the targets are constant.
double r2_score(const Vector<double>& y, const Vector<double>& y_hat);

struct RidgeCvResult {
  RidgeFit fit;  // refit on all rows with the chosen alpha
  std::vector<double> cv_r2;  // mean validation R^2 per candidate alpha
};

/// K contiguous folds; picks the alpha with the best mean validation R^2
/// (ties go to the smaller alpha) and refits on all rows.
RidgeCvResult ridge_cv(const Matrix<double>& x, const Vector<double>& y,
                       std::span<const double> alphas, std::size_t folds = 5);

inline constexpr double kGeoFeatureAlphas[] = {0.1, 1.0, 10.0};

/// Target layers sampled at train and test locations (rows = locations).
struct GeoFeatureSplit {
  std::vector<std::string> layer_names;
  std::vector<GeoCoord> train_locations;
  std::vector<GeoCoord> test_locations;
  Matrix<double> train_targets;  // n_train x layers
  Matrix<double> test_targets;   // n_test x layers
};

/// Assigns raster cells to train/test by a checkerboard of block_cells x
/// block_cells blocks; cells missing in any layer are dropped.
GeoFeatureSplit make_checkerboard_split(const std::vector<RasterGrid>& layers,
                                        std::vector<std::string> names, std::uint32_t block_cells);

struct LayerR2 {
  std::string name;
  double r2 = 0.0;
  double alpha = 0.0;
};

struct GeoFeatureReport {
  std::vector<LayerR2> layers;
  double mean_r2 = 0.0;
};

/// n x k feature matrix for the given locations.
using FeatureExtractor = std::function<Matrix<double>(std::span<const GeoCoord>)>;

/// Features are min-max scaled to [0, 1] with train-split statistics (constant
/// dimensions become 0; test values are not clipped), then one cross-validated
/// ridge model per layer is scored on the test split.
GeoFeatureReport geo_feature_task(const FeatureExtractor& extract, const GeoFeatureSplit& split,
                                  std::span<const double> alphas = kGeoFeatureAlphas);

}  // namespace sinr
