#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sinr/geo.hpp"
#include "sinr/rng.hpp"

namespace sinr {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class EncoderKind : std::uint8_t {
  residual_mlp = 0,
  /// No location encoder: the head acts on the input directly (logistic regression).
  identity = 1,
};

struct NetConfig {
  std::uint32_t input_dim = 4;
  std::uint32_t hidden_dim = 256;
  std::uint32_t n_residual_layers = 4;
  std::uint32_t n_species = 1;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;
  EncoderKind encoder = EncoderKind::residual_mlp;
  InputMode input_mode = InputMode::coords;

  void validate() const;
  /// Width of f(x): hidden_dim for the MLP, input_dim for the identity encoder.
  std::uint32_t feature_dim() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

template <typename T>
struct Linear {
  Matrix<T> weight;  // out x in
  Vector<T> bias;    // out
};

template <typename T>
struct ResidualBlock {
  Linear<T> first;
  Linear<T> second;
};

/// Encoder weights (input layer + residual blocks) and the species head.
///
/// Tensor order, used by the optimizer and by the model file:
///   input.weight, input.bias,
///   for each block: first.weight, first.bias, second.weight, second.bias,
///   head.weight, head.bias.
/// Weights are laid out column-major (Eigen default). The identity encoder has
/// an empty input layer and no blocks.
template <typename T>
struct Params {
  Linear<T> input;
  std::vector<ResidualBlock<T>> blocks;
  Linear<T> head;

  static Params zeros(const NetConfig& cfg);

  std::vector<std::span<T>> tensors();
  std::vector<std::span<const T>> tensors() const;
  std::size_t size() const;

  template <typename U>
  Params<U> cast() const;

  bool all_finite() const;
};

using NetParams = Params<float>;

/// Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
NetParams init_params(const NetConfig& cfg);
inline double init_variance(std::uint32_t fan_in) { return 1.0 / (3.0 * fan_in); }

enum class Mode { train, eval };

/// Activations kept by forward() for the matching backward() call. Columns
/// are batch elements.
template <typename T>
struct ForwardTrace {
  struct Block {
    Matrix<T> input;      // h entering the block
    Matrix<T> first_pre;  // pre-activation of the first linear layer
    Matrix<T> mask;       // inverted-dropout scale per unit, empty when inactive
    Matrix<T> hidden;     // relu(first_pre) * mask
    Matrix<T> second_pre;
  };

  Matrix<T> x;
  Matrix<T> input_pre;
  std::vector<Block> blocks;
  Matrix<T> features;  // k x batch
  Matrix<T> probs;     // n_species x batch
};

/// features = f(x), probs = sigmoid(head(features)). Residual block:
/// h + relu(W2 * dropout(relu(W1 h + b1)) + b2). Dropout only in train mode,
/// which then requires rng.
template <typename T>
ForwardTrace<T> forward(const Params<T>& p, const NetConfig& cfg, const Matrix<T>& x, Mode mode,
                        Rng* rng = nullptr);

/// Reverse-mode gradient for upstream gradients on probs and, optionally, on features.
template <typename T>
Params<T> backward(const Params<T>& p, const NetConfig& cfg, const ForwardTrace<T>& trace,
                   const Matrix<T>& d_probs, const Matrix<T>* d_features = nullptr);

/// Eval-mode probabilities, n_species x batch. Inputs are zero-padded to a
/// multiple of kEvalColumnPad columns so that every column takes the same
/// vectorized path; a location's score then does not depend on the rest of
/// the batch.
Matrix<float> predict(const NetParams& p, const NetConfig& cfg, const Matrix<float>& x);
/// Eval-mode location features, feature_dim x batch, padded like predict().
Matrix<float> features(const NetParams& p, const NetConfig& cfg, const Matrix<float>& x);
inline constexpr Eigen::Index kEvalColumnPad = 32;

template <typename T>
struct AdamState {
  Params<T> m;
  Params<T> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(const NetConfig& cfg);
};

/// One bias-corrected Adam update in place. Throws before touching anything
/// when a gradient entry is not finite.
template <typename T>
void adam_step(Params<T>& p, const Params<T>& grad, AdamState<T>& state, double lr);

/// A trained model plus the external species ids of its head rows.
struct Model {
  NetConfig config;
  NetParams params;
  std::vector<std::string> species_ids;

  std::optional<std::size_t> species_index(const std::string& id) const;
};

/// Model file, little-endian:
///   "SINR", u32 version,
///   config: u32 input_dim, u32 hidden_dim, u32 n_residual_layers, u32 n_species,
///           f64 dropout_p, u64 seed, u8 encoder, u8 input_mode, u16 reserved,
///   parameters: f32 arrays in Params tensor order,
///   species table: u32 count, then u32 length + bytes per id.
inline constexpr std::uint32_t kModelFormatVersion = 1;

void write_model(std::ostream& os, const Model& model);
Model read_model(std::istream& is);
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace sinr
