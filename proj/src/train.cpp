#include "sinr/train.hpp"

#include <cmath>
#include <fstream>

#include "sinr/binary_io.hpp"

namespace sinr {

namespace {

enum Stream : std::uint64_t { kBatch = 1, kDropout = 2, kLocations = 3, kNegatives = 4 };

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) {
    throw std::invalid_argument("initial_lr must be positive");
  }
  loss.validate();
  sampler.validate();
}

double lr_at_epoch(double initial_lr, std::uint32_t epoch) {
  return initial_lr * std::pow(0.98, static_cast<double>(epoch));
}

Trainer::Trainer(TrainConfig cfg, const ObservationSet& data, const EnvRasterStack* env)
    : cfg_(std::move(cfg)),
      data_(cfg_.sampler.cap_per_species
                ? subsample_cap(data, *cfg_.sampler.cap_per_species, cfg_.sampler.subsample_seed)
                : data),
      env_(env),
      batch_rng_(derive_rng(cfg_.master_seed, kBatch)),
      dropout_rng_(derive_rng(cfg_.master_seed, kDropout)),
      location_rng_(derive_rng(cfg_.master_seed, kLocations)),
      negative_rng_(derive_rng(cfg_.master_seed, kNegatives)) {
  cfg_.validate();
  if (data_.empty()) throw std::invalid_argument("training data is empty");
  const InputMode mode = cfg_.sampler.input_mode;
  if (needs_env(mode) != (env_ != nullptr)) {
    throw std::invalid_argument(needs_env(mode) ? "input mode " + to_string(mode) +
                                                      " needs environmental rasters"
                                                : "environmental rasters given for coords input");
  }
  if (!uses_random_locations(cfg_.loss.variant) && data_.n_species() < 2) {
    throw std::invalid_argument(to_string(cfg_.loss.variant) + " needs at least two species");
  }
  cfg_.net.input_mode = mode;
  cfg_.net.input_dim = static_cast<std::uint32_t>(input_dim(mode, env_ ? env_->n_layers() : 0));
  cfg_.net.n_species = static_cast<std::uint32_t>(data_.n_species());
  cfg_.net.seed = cfg_.master_seed;
  params_ = init_params(cfg_.net);
  adam_ = AdamState<float>::zeros(cfg_.net);
}

std::size_t Trainer::steps_per_epoch() const {
  return (data_.size() + cfg_.sampler.batch_size - 1) / cfg_.sampler.batch_size;
}

void Trainer::step(double lr) {
  const std::size_t step_index = log_.step_losses.size();
  Batch batch = sample_batch(data_, cfg_.sampler, env_, batch_rng_);
  const auto n = static_cast<Eigen::Index>(batch.targets.size());
  const bool random_term = uses_random_locations(cfg_.loss.variant);

  Matrix<float> x;
  if (random_term) {
    std::vector<GeoCoord> locs;
    if (env_ != nullptr) {
      const RasterGrid& g = env_->geometry();
      locs = sample_uniform_locations(batch.targets.size(), location_rng_, g.lon_min, g.lon_max,
                                      g.lat_min, g.lat_max);
    } else {
      locs = sample_uniform_locations(batch.targets.size(), location_rng_);
    }
    const Matrix<float> x_rand = encode_inputs(locs, cfg_.sampler.input_mode, env_);
    x.resize(batch.inputs.rows(), 2 * n);
    x << batch.inputs, x_rand;
  } else {
    x = std::move(batch.inputs);
  }

  const ForwardTrace<float> trace = forward(params_, cfg_.net, x, Mode::train, &dropout_rng_);
  const Matrix<double> probs = trace.probs.cast<double>();
  const Matrix<double> probs_data = probs.leftCols(n);
  const Matrix<double> probs_rand = random_term ? Matrix<double>(probs.rightCols(n)) : Matrix<double>();
  const LossResult loss = compute_loss(cfg_.loss, probs_data, probs_rand, batch.targets, negative_rng_);
  if (!std::isfinite(loss.value)) {
    throw TrainingError(step_index, "non-finite loss at step " + std::to_string(step_index));
  }

  Matrix<float> d_probs(probs.rows(), probs.cols());
  d_probs.leftCols(n) = loss.d_probs.cast<float>();
  if (random_term) d_probs.rightCols(n) = loss.d_probs_rand.cast<float>();
  const NetParams grad = backward(params_, cfg_.net, trace, d_probs);
  try {
    adam_step(params_, grad, adam_, lr);
  } catch (const std::domain_error& e) {
    throw TrainingError(step_index, std::string(e.what()) + " at step " + std::to_string(step_index));
  }
  log_.step_losses.push_back(loss.value);
  log_.pseudo_negative_locations.push_back(random_term ? batch.targets.size() : 0);
}

void Trainer::run_epoch() {
  if (done()) throw std::logic_error("training already finished");
  const double lr = lr_at_epoch(cfg_.initial_lr, epoch_);
  const std::size_t steps = steps_per_epoch();
  double sum = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    step(lr);
    sum += log_.step_losses.back();
  }
  log_.epoch_mean_losses.push_back(sum / static_cast<double>(steps));
  ++epoch_;
}

void Trainer::run() {
  while (!done()) run_epoch();
}

Model Trainer::model() const { return Model{cfg_.net, params_, data_.species_ids()}; }

// Checkpoint, little-endian:
//   "SCKP", u32 version, model block (see write_model),
//   run settings: u32 epochs, f64 initial_lr, u8 loss, f64 lambda, u64 batch_size,
//                 u64 cap (0 = none), u64 subsample_seed, u64 master_seed,
//   Adam: u64 t, f64 beta1, f64 beta2, f64 eps, f32 m arrays, f32 v arrays,
//   u32 epoch, four rng states as length-prefixed text,
//   log: u64 count + f64 step losses, u64 count + f64 epoch means,
//        u64 count + u64 pseudo-negative counts.
void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open " + path + " for writing");
  BinaryWriter w(os);
  w.bytes("SCKP", 4);
  w.u32(kCheckpointFormatVersion);
  write_model(os, model());
  w.u32(cfg_.epochs);
  w.f64(cfg_.initial_lr);
  w.u8(static_cast<std::uint8_t>(cfg_.loss.variant));
  w.f64(cfg_.loss.lambda);
  w.u64(cfg_.sampler.batch_size);
  w.u64(cfg_.sampler.cap_per_species.value_or(0));
  w.u64(cfg_.sampler.subsample_seed);
  w.u64(cfg_.master_seed);
  w.u64(adam_.t);
  w.f64(adam_.beta1);
  w.f64(adam_.beta2);
  w.f64(adam_.eps);
  for (auto t : adam_.m.tensors()) w.f32_array(t);
  for (auto t : adam_.v.tensors()) w.f32_array(t);
  w.u32(epoch_);
  for (const Rng* r : {&batch_rng_, &dropout_rng_, &location_rng_, &negative_rng_}) {
    w.str(rng_state(*r));
  }
  w.u64(log_.step_losses.size());
  for (double v : log_.step_losses) w.f64(v);
  w.u64(log_.epoch_mean_losses.size());
  for (double v : log_.epoch_mean_losses) w.f64(v);
  w.u64(log_.pseudo_negative_locations.size());
  for (auto v : log_.pseudo_negative_locations) w.u64(v);
}

Trainer Trainer::resume(const std::string& path, TrainConfig cfg, const ObservationSet& data,
                        const EnvRasterStack* env) {
  Trainer t(std::move(cfg), data, env);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open " + path);
  BinaryReader r(is);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "SCKP") throw FormatError(FormatError::Kind::bad_magic, "bad magic");
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      "unsupported checkpoint version " + std::to_string(version));
  }
  Model m = read_model(is);
  if (!(m.config == t.cfg_.net)) {
    throw std::invalid_argument("checkpoint network config does not match the run");
  }
  if (m.species_ids != t.data_.species_ids()) {
    throw std::invalid_argument("checkpoint species catalog does not match the data");
  }
  const auto epochs = r.u32();
  const auto lr = r.f64();
  const auto variant = r.u8();
  const auto lambda = r.f64();
  const auto batch_size = r.u64();
  const auto cap = r.u64();
  const auto subsample_seed = r.u64();
  const auto master_seed = r.u64();
  const TrainConfig& c = t.cfg_;
  if (epochs != c.epochs || lr != c.initial_lr || variant != static_cast<std::uint8_t>(c.loss.variant) ||
      lambda != c.loss.lambda || batch_size != c.sampler.batch_size ||
      cap != c.sampler.cap_per_species.value_or(0) || subsample_seed != c.sampler.subsample_seed ||
      master_seed != c.master_seed) {
    throw std::invalid_argument("checkpoint training settings do not match the run");
  }
  t.params_ = std::move(m.params);
  t.adam_ = AdamState<float>::zeros(t.cfg_.net);
  t.adam_.t = r.u64();
  t.adam_.beta1 = r.f64();
  t.adam_.beta2 = r.f64();
  t.adam_.eps = r.f64();
  for (auto span : t.adam_.m.tensors()) r.f32_array(span);
  for (auto span : t.adam_.v.tensors()) r.f32_array(span);
  t.epoch_ = r.u32();
  if (t.epoch_ > t.cfg_.epochs) throw FormatError(FormatError::Kind::corrupt, "epoch out of range");
  try {
    for (Rng* rng : {&t.batch_rng_, &t.dropout_rng_, &t.location_rng_, &t.negative_rng_}) {
      *rng = rng_from_state(r.str());
    }
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const FormatError*>(&e)) throw;
    throw FormatError(FormatError::Kind::corrupt, e.what());
  }
  auto read_count = [&] {
    const auto n = r.u64();
    if (n > (std::uint64_t{1} << 32)) throw FormatError(FormatError::Kind::corrupt, "bad log size");
    return static_cast<std::size_t>(n);
  };
  t.log_.step_losses.resize(read_count());
  for (double& v : t.log_.step_losses) v = r.f64();
  t.log_.epoch_mean_losses.resize(read_count());
  for (double& v : t.log_.epoch_mean_losses) v = r.f64();
  t.log_.pseudo_negative_locations.resize(read_count());
  for (auto& v : t.log_.pseudo_negative_locations) v = r.u64();
  return t;
}

TrainResult train(const TrainConfig& cfg, const ObservationSet& data, const EnvRasterStack* env) {
  Trainer t(cfg, data, env);
  t.run();
  return {t.model(), t.log()};
}

}  // namespace sinr
