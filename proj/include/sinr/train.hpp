#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sinr/data.hpp"
#include "sinr/losses.hpp"
#include "sinr/net.hpp"

namespace sinr {

struct TrainConfig {
  std::uint32_t epochs = 10;
  double initial_lr = 5e-4;
  LossConfig loss;
  NetConfig net;
  SamplerConfig sampler;
  std::uint64_t master_seed = 0;

  void validate() const;
};

/// initial_lr * 0.98^epoch.
double lr_at_epoch(double initial_lr, std::uint32_t epoch);

struct TrainingLog {
  std::vector<double> step_losses;
  std::vector<double> epoch_mean_losses;
  std::vector<std::size_t> pseudo_negative_locations;  // per step
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Owns the mutable training state: parameters, Adam moments, rng streams
/// (batches, dropout, random locations, SLDS negatives) and the epoch counter.
/// Every stream, and the weight initialization, derives from master_seed.
///
/// The data set is copied; when sampler.cap_per_species is set the copy is
/// subsampled with sampler.subsample_seed. net.input_dim, net.input_mode,
/// net.n_species and net.seed are filled in from the data, the sampler and
/// master_seed.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const ObservationSet& data, const EnvRasterStack* env = nullptr);

  /// Restores a checkpoint written by save_checkpoint(); cfg and data must be
  /// those of the interrupted run.
  static Trainer resume(const std::string& path, TrainConfig cfg, const ObservationSet& data,
                        const EnvRasterStack* env = nullptr);

  void run_epoch();
  void run();
  bool done() const { return epoch_ >= cfg_.epochs; }

  /// Valid at epoch boundaries (after construction or run_epoch()).
  void save_checkpoint(const std::string& path) const;

  const TrainConfig& config() const { return cfg_; }
  const NetParams& params() const { return params_; }
  const AdamState<float>& adam() const { return adam_; }
  const TrainingLog& log() const { return log_; }
  std::uint32_t epoch() const { return epoch_; }
  std::size_t steps_per_epoch() const;
  Model model() const;

 private:
  void step(double lr);

  TrainConfig cfg_;
  ObservationSet data_;
  const EnvRasterStack* env_;
  NetParams params_;
  AdamState<float> adam_;
  Rng batch_rng_;
  Rng dropout_rng_;
  Rng location_rng_;
  Rng negative_rng_;
  std::uint32_t epoch_ = 0;
  TrainingLog log_;
};

struct TrainResult {
  Model model;
  TrainingLog log;
};

TrainResult train(const TrainConfig& cfg, const ObservationSet& data,
                  const EnvRasterStack* env = nullptr);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

}  // namespace sinr
