#include "sinr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sinr {

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::an_ssdl: return "an-ssdl";
    case LossVariant::an_slds: return "an-slds";
    case LossVariant::an_full: return "an-full";
    case LossVariant::me_ssdl: return "me-ssdl";
    case LossVariant::me_slds: return "me-slds";
    case LossVariant::me_full: return "me-full";
  }
  return "unknown";
}

LossVariant parse_loss_variant(const std::string& text) {
  for (auto v : {LossVariant::an_ssdl, LossVariant::an_slds, LossVariant::an_full,
                 LossVariant::me_ssdl, LossVariant::me_slds, LossVariant::me_full}) {
    if (to_string(v) == text) return v;
  }
  throw std::invalid_argument("unknown loss: " + text);
}

bool is_max_entropy(LossVariant v) {
  return v == LossVariant::me_ssdl || v == LossVariant::me_slds || v == LossVariant::me_full;
}

bool uses_random_locations(LossVariant v) {
  return v != LossVariant::an_slds && v != LossVariant::me_slds;
}

void LossConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be > 0");
}

void BatchTargets::validate() const {
  if (n_species == 0) throw std::invalid_argument("targets need at least one species");
  for (auto j : positive) {
    if (j >= n_species) throw std::invalid_argument("positive index out of range");
  }
}

double bernoulli_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("bernoulli_entropy: p outside [0, 1]");
  auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  return -(xlogx(p) + xlogx(1.0 - p));
}

double bernoulli_entropy_grad(double p) { return std::log((1.0 - p) / p); }

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

/// The term applied to a label treated as unobserved-negative, and its derivative.
struct NegativeTerm {
  bool max_entropy;

  double value(double p) const {
    const double q = clamp_prob(p);
    return max_entropy ? bernoulli_entropy(q) : -std::log(1.0 - q);
  }
  double grad(double p) const {
    const double q = clamp_prob(p);
    return max_entropy ? bernoulli_entropy_grad(q) : 1.0 / (1.0 - q);
  }
};

double positive_value(double p) { return -std::log(clamp_prob(p)); }
double positive_grad(double p) { return -1.0 / clamp_prob(p); }

void check_shapes(const Matrix<double>& probs, const BatchTargets& t) {
  t.validate();
  if (probs.rows() != static_cast<Eigen::Index>(t.n_species) ||
      probs.cols() != static_cast<Eigen::Index>(t.size())) {
    throw std::invalid_argument("prediction shape does not match targets");
  }
  if (t.size() == 0) throw std::invalid_argument("empty batch");
}

void check_rand_shape(const Matrix<double>& probs, const Matrix<double>& probs_rand) {
  if (probs_rand.rows() != probs.rows() || probs_rand.cols() != probs.cols()) {
    throw std::invalid_argument("random-location predictions must match the data predictions");
  }
}

void finish(LossResult& r) { r.value = r.positive_part + r.negative_part + r.random_part; }

LossResult same_species_different_location(const Matrix<double>& probs,
                                           const Matrix<double>& probs_rand, const BatchTargets& t,
                                           NegativeTerm neg) {
  check_shapes(probs, t);
  check_rand_shape(probs, probs_rand);
  const auto batch = static_cast<double>(t.size());
  LossResult r;
  r.d_probs = Matrix<double>::Zero(probs.rows(), probs.cols());
  r.d_probs_rand = Matrix<double>::Zero(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    const auto j = static_cast<Eigen::Index>(t.positive[i]);
    r.positive_part += positive_value(probs(j, i)) / batch;
    r.random_part += neg.value(probs_rand(j, i)) / batch;
    r.d_probs(j, i) = positive_grad(probs(j, i)) / batch;
    r.d_probs_rand(j, i) = neg.grad(probs_rand(j, i)) / batch;
  }
  finish(r);
  return r;
}

LossResult same_location_different_species(const Matrix<double>& probs, const BatchTargets& t,
                                           const std::vector<std::uint32_t>& negatives,
                                           NegativeTerm neg) {
  check_shapes(probs, t);
  if (negatives.size() != t.size()) throw std::invalid_argument("one negative per example required");
  const auto batch = static_cast<double>(t.size());
  LossResult r;
  r.d_probs = Matrix<double>::Zero(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    const auto j = static_cast<Eigen::Index>(t.positive[i]);
    const auto k = static_cast<Eigen::Index>(negatives[i]);
    if (negatives[i] >= t.n_species || k == j) {
      throw std::invalid_argument("negative species must differ from the positive");
    }
    r.positive_part += positive_value(probs(j, i)) / batch;
    r.negative_part += neg.value(probs(k, i)) / batch;
    r.d_probs(j, i) = positive_grad(probs(j, i)) / batch;
    r.d_probs(k, i) = neg.grad(probs(k, i)) / batch;
  }
  r.negative_species = negatives;
  finish(r);
  return r;
}

LossResult full(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                const BatchTargets& t, double lambda, NegativeTerm neg) {
  check_shapes(probs, t);
  check_rand_shape(probs, probs_rand);
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  const double scale = 1.0 / (static_cast<double>(t.size()) * t.n_species);
  LossResult r;
  r.d_probs.resize(probs.rows(), probs.cols());
  r.d_probs_rand.resize(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    const auto pos = static_cast<Eigen::Index>(t.positive[i]);
    double neg_sum = 0.0;
    double rand_sum = 0.0;
    for (Eigen::Index j = 0; j < probs.rows(); ++j) {
      if (j == pos) {
        r.positive_part += lambda * positive_value(probs(j, i)) * scale;
        r.d_probs(j, i) = lambda * positive_grad(probs(j, i)) * scale;
      } else {
        neg_sum += neg.value(probs(j, i));
        r.d_probs(j, i) = neg.grad(probs(j, i)) * scale;
      }
      rand_sum += neg.value(probs_rand(j, i));
      r.d_probs_rand(j, i) = neg.grad(probs_rand(j, i)) * scale;
    }
    r.negative_part += neg_sum * scale;
    r.random_part += rand_sum * scale;
  }
  finish(r);
  return r;
}

}  // namespace

std::vector<std::uint32_t> sample_negative_species(const BatchTargets& t, Rng& rng) {
  t.validate();
  if (t.n_species < 2) throw std::invalid_argument("SLDS needs at least two species");
  std::vector<std::uint32_t> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    // Uniform over the n_species - 1 indices that are not the positive.
    auto k = static_cast<std::uint32_t>(uniform_index(rng, t.n_species - 1));
    out[i] = k >= t.positive[i] ? k + 1 : k;
  }
  return out;
}

LossResult loss_an_ssdl(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t) {
  return same_species_different_location(probs, probs_rand, t, {false});
}

LossResult loss_an_slds(const Matrix<double>& probs, const BatchTargets& t, Rng& rng) {
  return loss_an_slds(probs, t, sample_negative_species(t, rng));
}

LossResult loss_an_slds(const Matrix<double>& probs, const BatchTargets& t,
                        const std::vector<std::uint32_t>& negatives) {
  if (t.n_species < 2) throw std::invalid_argument("SLDS needs at least two species");
  return same_location_different_species(probs, t, negatives, {false});
}

LossResult loss_an_full(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t, double lambda) {
  return full(probs, probs_rand, t, lambda, {false});
}

LossResult loss_me_ssdl(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t) {
  return same_species_different_location(probs, probs_rand, t, {true});
}

LossResult loss_me_slds(const Matrix<double>& probs, const BatchTargets& t, Rng& rng) {
  return loss_me_slds(probs, t, sample_negative_species(t, rng));
}

LossResult loss_me_slds(const Matrix<double>& probs, const BatchTargets& t,
                        const std::vector<std::uint32_t>& negatives) {
  if (t.n_species < 2) throw std::invalid_argument("SLDS needs at least two species");
  return same_location_different_species(probs, t, negatives, {true});
}

LossResult loss_me_full(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t, double lambda) {
  return full(probs, probs_rand, t, lambda, {true});
}

LossResult compute_loss(const LossConfig& cfg, const Matrix<double>& probs,
                        const Matrix<double>& probs_rand, const BatchTargets& t, Rng& rng) {
  cfg.validate();
  switch (cfg.variant) {
    case LossVariant::an_ssdl: return loss_an_ssdl(probs, probs_rand, t);
    case LossVariant::an_slds: return loss_an_slds(probs, t, rng);
    case LossVariant::an_full: return loss_an_full(probs, probs_rand, t, cfg.lambda);
    case LossVariant::me_ssdl: return loss_me_ssdl(probs, probs_rand, t);
    case LossVariant::me_slds: return loss_me_slds(probs, t, rng);
    case LossVariant::me_full: return loss_me_full(probs, probs_rand, t, cfg.lambda);
  }
  throw std::invalid_argument("unknown loss variant");
}

}  // namespace sinr
