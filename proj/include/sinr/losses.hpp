#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sinr/net.hpp"
#include "sinr/rng.hpp"

namespace sinr {

/// Presence-only losses. "AN" variants assume unobserved labels are negative;
/// "ME" variants replace every -log(1 - p) term with the Bernoulli entropy H(p).
/// SSDL draws pseudo-negatives at random locations for the observed species,
/// SLDS at the observed location for one random other species, FULL uses all
/// species at both the observed and the random location.
enum class LossVariant : std::uint8_t { an_ssdl, an_slds, an_full, me_ssdl, me_slds, me_full };

std::string to_string(LossVariant v);
LossVariant parse_loss_variant(const std::string& text);
bool is_max_entropy(LossVariant v);
/// True for variants that need predictions at uniformly random locations.
bool uses_random_locations(LossVariant v);

struct LossConfig {
  LossVariant variant = LossVariant::an_full;
  double lambda = 2048.0;

  void validate() const;
};

/// One observed positive species per example; every other label is unknown.
struct BatchTargets {
  std::vector<std::uint32_t> positive;
  std::uint32_t n_species = 0;

  std::size_t size() const { return positive.size(); }
  void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

/// Loss value (mean over the batch) and its gradients. Predictions are
/// n_species x batch. The value splits into the term on observed positives,
/// the pseudo-negative terms at the data location, and the terms at the random
/// location. Gradients pass through the clamp as identity.
struct LossResult {
  double value = 0.0;
  double positive_part = 0.0;
  double negative_part = 0.0;
  double random_part = 0.0;
  Matrix<double> d_probs;
  Matrix<double> d_probs_rand;  // empty when the variant has no random term
  std::vector<std::uint32_t> negative_species;  // sampled j' per example (SLDS only)
};

/// -(p ln p + (1 - p) ln(1 - p)) with 0 ln 0 = 0; p must lie in [0, 1].
double bernoulli_entropy(double p);
/// dH/dp = ln((1 - p) / p).
double bernoulli_entropy_grad(double p);

LossResult loss_an_ssdl(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t);
LossResult loss_an_slds(const Matrix<double>& probs, const BatchTargets& t, Rng& rng);
/// SLDS with caller-chosen negatives, one per example.
LossResult loss_an_slds(const Matrix<double>& probs, const BatchTargets& t,
                        const std::vector<std::uint32_t>& negatives);
LossResult loss_an_full(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t, double lambda);

LossResult loss_me_ssdl(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t);
LossResult loss_me_slds(const Matrix<double>& probs, const BatchTargets& t, Rng& rng);
LossResult loss_me_slds(const Matrix<double>& probs, const BatchTargets& t,
                        const std::vector<std::uint32_t>& negatives);
LossResult loss_me_full(const Matrix<double>& probs, const Matrix<double>& probs_rand,
                        const BatchTargets& t, double lambda);

/// Dispatch on cfg.variant. probs_rand may be empty for SLDS variants.
LossResult compute_loss(const LossConfig& cfg, const Matrix<double>& probs,
                        const Matrix<double>& probs_rand, const BatchTargets& t, Rng& rng);

/// Draw j' uniformly from the species other than each example's positive.
std::vector<std::uint32_t> sample_negative_species(const BatchTargets& t, Rng& rng);

}  // namespace sinr
