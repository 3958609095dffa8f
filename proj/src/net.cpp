#include "sinr/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "sinr/binary_io.hpp"

namespace sinr {

void NetConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("input_dim must be positive");
  if (n_species == 0) throw std::invalid_argument("n_species must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw std::invalid_argument("dropout_p must lie in [0, 1)");
  }
  if (encoder == EncoderKind::residual_mlp && hidden_dim == 0) {
    throw std::invalid_argument("hidden_dim must be positive");
  }
  if (encoder == EncoderKind::identity && n_residual_layers != 0) {
    throw std::invalid_argument("identity encoder takes no residual layers");
  }
}

std::uint32_t NetConfig::feature_dim() const {
  return encoder == EncoderKind::identity ? input_dim : hidden_dim;
}

namespace {

template <typename T>
Linear<T> zero_linear(Eigen::Index out, Eigen::Index in) {
  return {Matrix<T>::Zero(out, in), Vector<T>::Zero(out)};
}

template <typename T>
void relu_inplace(Matrix<T>& m) {
  m = m.cwiseMax(T(0));
}

template <typename T>
Matrix<T> affine(const Linear<T>& layer, const Matrix<T>& x) {
  Matrix<T> out = layer.weight * x;
  out.colwise() += layer.bias;
  return out;
}

template <typename T>
void accumulate_linear(Linear<T>& grad, const Matrix<T>& d_out, const Matrix<T>& input) {
  grad.weight.noalias() += d_out * input.transpose();
  grad.bias += d_out.rowwise().sum();
}

}  // namespace

template <typename T>
Params<T> Params<T>::zeros(const NetConfig& cfg) {
  cfg.validate();
  Params<T> p;
  const Eigen::Index k = cfg.feature_dim();
  if (cfg.encoder == EncoderKind::residual_mlp) {
    p.input = zero_linear<T>(cfg.hidden_dim, cfg.input_dim);
    p.blocks.resize(cfg.n_residual_layers);
    for (auto& b : p.blocks) {
      b.first = zero_linear<T>(cfg.hidden_dim, cfg.hidden_dim);
      b.second = zero_linear<T>(cfg.hidden_dim, cfg.hidden_dim);
    }
  }
  p.head = zero_linear<T>(cfg.n_species, k);
  return p;
}

template <typename T>
std::vector<std::span<T>> Params<T>::tensors() {
  std::vector<std::span<T>> out;
  auto add = [&](Linear<T>& l) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  };
  add(input);
  for (auto& b : blocks) {
    add(b.first);
    add(b.second);
  }
  add(head);
  return out;
}

template <typename T>
std::vector<std::span<const T>> Params<T>::tensors() const {
  auto spans = const_cast<Params<T>*>(this)->tensors();
  return {spans.begin(), spans.end()};
}

template <typename T>
std::size_t Params<T>::size() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

template <typename T>
template <typename U>
Params<U> Params<T>::cast() const {
  auto conv = [](const Linear<T>& l) {
    return Linear<U>{l.weight.template cast<U>(), l.bias.template cast<U>()};
  };
  Params<U> out;
  out.input = conv(input);
  for (const auto& b : blocks) out.blocks.push_back({conv(b.first), conv(b.second)});
  out.head = conv(head);
  return out;
}

template <typename T>
bool Params<T>::all_finite() const {
  for (auto t : tensors()) {
    for (T v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

NetParams init_params(const NetConfig& cfg) {
  NetParams p = NetParams::zeros(cfg);
  Rng rng = derive_rng(cfg.seed, 0x1a17);
  auto fill = [&](Linear<float>& l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      l.weight.data()[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  };
  if (cfg.encoder == EncoderKind::residual_mlp) {
    fill(p.input);
    for (auto& b : p.blocks) {
      fill(b.first);
      fill(b.second);
    }
  }
  fill(p.head);
  return p;
}

template <typename T>
ForwardTrace<T> forward(const Params<T>& p, const NetConfig& cfg, const Matrix<T>& x, Mode mode,
                        Rng* rng) {
  if (x.rows() != static_cast<Eigen::Index>(cfg.input_dim)) {
    throw std::invalid_argument("input has " + std::to_string(x.rows()) + " rows, expected " +
                                std::to_string(cfg.input_dim));
  }
  const bool dropout = mode == Mode::train && cfg.dropout_p > 0.0;
  if (dropout && rng == nullptr) throw std::invalid_argument("train-mode dropout needs an rng");

  ForwardTrace<T> tr;
  tr.x = x;
  if (cfg.encoder == EncoderKind::identity) {
    tr.features = x;
  } else {
    tr.input_pre = affine(p.input, x);
    Matrix<T> h = tr.input_pre.cwiseMax(T(0));
    const T keep_scale = T(1.0 / (1.0 - cfg.dropout_p));
    for (const auto& block : p.blocks) {
      typename ForwardTrace<T>::Block b;
      b.first_pre = affine(block.first, h);
      b.hidden = b.first_pre.cwiseMax(T(0));
      if (dropout) {
        b.mask.resize(b.hidden.rows(), b.hidden.cols());
        for (Eigen::Index i = 0; i < b.mask.size(); ++i) {
          b.mask.data()[i] = uniform01(*rng) < cfg.dropout_p ? T(0) : keep_scale;
        }
        b.hidden.array() *= b.mask.array();
      }
      b.second_pre = affine(block.second, b.hidden);
      b.input = std::move(h);
      h = b.input + b.second_pre.cwiseMax(T(0));
      tr.blocks.push_back(std::move(b));
    }
    tr.features = std::move(h);
  }
  Matrix<T> logits = affine(p.head, tr.features);
  tr.probs = (T(1) + (-logits.array()).exp()).inverse().matrix();
  return tr;
}

template <typename T>
Params<T> backward(const Params<T>& p, const NetConfig& cfg, const ForwardTrace<T>& trace,
                   const Matrix<T>& d_probs, const Matrix<T>* d_features) {
  if (d_probs.rows() != trace.probs.rows() || d_probs.cols() != trace.probs.cols()) {
    throw std::invalid_argument("upstream gradient shape does not match forward output");
  }
  if (d_features != nullptr && (d_features->rows() != trace.features.rows() ||
                                d_features->cols() != trace.features.cols())) {
    throw std::invalid_argument("feature gradient shape does not match forward output");
  }
  if (trace.blocks.size() != p.blocks.size()) {
    throw std::invalid_argument("trace does not match parameter structure");
  }
  Params<T> g = Params<T>::zeros(cfg);

  const Matrix<T> d_logits =
      (d_probs.array() * trace.probs.array() * (T(1) - trace.probs.array())).matrix();
  accumulate_linear(g.head, d_logits, trace.features);
  Matrix<T> d_h = p.head.weight.transpose() * d_logits;
  if (d_features != nullptr) d_h += *d_features;

  if (cfg.encoder == EncoderKind::identity) return g;

  for (std::size_t i = p.blocks.size(); i-- > 0;) {
    const auto& b = trace.blocks[i];
    const auto& w = p.blocks[i];
    const Matrix<T> d_second = (d_h.array() * (b.second_pre.array() > T(0)).template cast<T>()).matrix();
    accumulate_linear(g.blocks[i].second, d_second, b.hidden);
    Matrix<T> d_hidden = w.second.weight.transpose() * d_second;
    if (b.mask.size() != 0) {
      if (b.mask.rows() != d_hidden.rows() || b.mask.cols() != d_hidden.cols()) {
        throw std::invalid_argument("dropout mask shape mismatch");
      }
      d_hidden.array() *= b.mask.array();
    }
    d_hidden.array() *= (b.first_pre.array() > T(0)).template cast<T>();
    accumulate_linear(g.blocks[i].first, d_hidden, b.input);
    d_h.noalias() += w.first.weight.transpose() * d_hidden;
  }
  d_h.array() *= (trace.input_pre.array() > T(0)).template cast<T>();
  accumulate_linear(g.input, d_h, trace.x);
  return g;
}

namespace {

// GEMM remainder panels, the matrix-vector path and the scalar tail of
// vectorized exp() all round differently from the main kernels.
Matrix<float> pad_columns(const Matrix<float>& x) {
  const Eigen::Index n = x.cols();
  const Eigen::Index padded = std::max<Eigen::Index>(1, (n + kEvalColumnPad - 1) / kEvalColumnPad) * kEvalColumnPad;
  Matrix<float> out = Matrix<float>::Zero(x.rows(), padded);
  out.leftCols(n) = x;
  return out;
}

}  // namespace

Matrix<float> predict(const NetParams& p, const NetConfig& cfg, const Matrix<float>& x) {
  return forward(p, cfg, pad_columns(x), Mode::eval).probs.leftCols(x.cols());
}

Matrix<float> features(const NetParams& p, const NetConfig& cfg, const Matrix<float>& x) {
  return forward(p, cfg, pad_columns(x), Mode::eval).features.leftCols(x.cols());
}

template <typename T>
AdamState<T> AdamState<T>::zeros(const NetConfig& cfg) {
  AdamState<T> s;
  s.m = Params<T>::zeros(cfg);
  s.v = Params<T>::zeros(cfg);
  return s;
}

template <typename T>
void adam_step(Params<T>& p, const Params<T>& grad, AdamState<T>& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  auto pt = p.tensors();
  auto gt = grad.tensors();
  auto mt = state.m.tensors();
  auto vt = state.v.tensors();
  if (gt.size() != pt.size() || mt.size() != pt.size() || vt.size() != pt.size()) {
    throw std::invalid_argument("adam: parameter structure mismatch");
  }
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (gt[i].size() != pt[i].size() || mt[i].size() != pt[i].size() ||
        vt[i].size() != pt[i].size()) {
      throw std::invalid_argument("adam: tensor shape mismatch");
    }
  }
  if (!grad.all_finite()) throw std::domain_error("adam: non-finite gradient");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < pt.size(); ++i) {
    for (std::size_t j = 0; j < pt[i].size(); ++j) {
      const double g = gt[i][j];
      const double m = state.beta1 * mt[i][j] + (1.0 - state.beta1) * g;
      const double v = state.beta2 * vt[i][j] + (1.0 - state.beta2) * g * g;
      mt[i][j] = static_cast<T>(m);
      vt[i][j] = static_cast<T>(v);
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      pt[i][j] = static_cast<T>(pt[i][j] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

std::optional<std::size_t> Model::species_index(const std::string& id) const {
  for (std::size_t i = 0; i < species_ids.size(); ++i) {
    if (species_ids[i] == id) return i;
  }
  return std::nullopt;
}

void write_model(std::ostream& os, const Model& model) {
  const NetConfig& c = model.config;
  c.validate();
  if (!model.species_ids.empty() && model.species_ids.size() != c.n_species) {
    throw std::invalid_argument("species table size does not match n_species");
  }
  BinaryWriter w(os);
  w.bytes("SINR", 4);
  w.u32(kModelFormatVersion);
  w.u32(c.input_dim);
  w.u32(c.hidden_dim);
  w.u32(c.n_residual_layers);
  w.u32(c.n_species);
  w.f64(c.dropout_p);
  w.u64(c.seed);
  w.u8(static_cast<std::uint8_t>(c.encoder));
  w.u8(static_cast<std::uint8_t>(c.input_mode));
  w.u16(0);
  const NetParams expected = NetParams::zeros(c);
  const auto tensors = model.params.tensors();
  const auto shapes = expected.tensors();
  if (tensors.size() != shapes.size()) throw std::invalid_argument("parameters do not match config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].size() != shapes[i].size()) {
      throw std::invalid_argument("parameters do not match config");
    }
    w.f32_array(tensors[i]);
  }
  w.u32(static_cast<std::uint32_t>(model.species_ids.size()));
  for (const auto& id : model.species_ids) w.str(id);
}

Model read_model(std::istream& is) {
  BinaryReader r(is);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "SINR") throw FormatError(FormatError::Kind::bad_magic, "bad magic");
  const auto version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      "unsupported version " + std::to_string(version));
  }
  Model m;
  NetConfig& c = m.config;
  c.input_dim = r.u32();
  c.hidden_dim = r.u32();
  c.n_residual_layers = r.u32();
  c.n_species = r.u32();
  c.dropout_p = r.f64();
  c.seed = r.u64();
  const auto encoder = r.u8();
  const auto input_mode = r.u8();
  r.u16();
  if (encoder > 1 || input_mode > 2) throw FormatError(FormatError::Kind::corrupt, "bad config block");
  c.encoder = static_cast<EncoderKind>(encoder);
  c.input_mode = static_cast<InputMode>(input_mode);
  if (c.input_dim > (1u << 20) || c.hidden_dim > (1u << 16) || c.n_residual_layers > 1024 ||
      c.n_species > (1u << 24)) {
    throw FormatError(FormatError::Kind::corrupt, "config block out of range");
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Kind::corrupt, e.what());
  }
  m.params = NetParams::zeros(c);
  for (auto t : m.params.tensors()) r.f32_array(t);
  const auto n_ids = r.u32();
  if (n_ids != 0 && n_ids != c.n_species) {
    throw FormatError(FormatError::Kind::corrupt, "species table size mismatch");
  }
  m.species_ids.reserve(n_ids);
  for (std::uint32_t i = 0; i < n_ids; ++i) m.species_ids.push_back(r.str());
  return m;
}

void save_model(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open " + path + " for writing");
  write_model(os, model);
}

Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open " + path);
  return read_model(is);
}

template struct Params<float>;
template struct Params<double>;
template Params<double> Params<float>::cast<double>() const;
template Params<float> Params<double>::cast<float>() const;
template Params<float> Params<float>::cast<float>() const;
template Params<double> Params<double>::cast<double>() const;
template struct AdamState<float>;
template struct AdamState<double>;
template ForwardTrace<float> forward(const Params<float>&, const NetConfig&, const Matrix<float>&,
                                     Mode, Rng*);
template ForwardTrace<double> forward(const Params<double>&, const NetConfig&,
                                      const Matrix<double>&, Mode, Rng*);
template Params<float> backward(const Params<float>&, const NetConfig&, const ForwardTrace<float>&,
                                const Matrix<float>&, const Matrix<float>*);
template Params<double> backward(const Params<double>&, const NetConfig&,
                                 const ForwardTrace<double>&, const Matrix<double>&,
                                 const Matrix<double>*);
template void adam_step(Params<float>&, const Params<float>&, AdamState<float>&, double);
template void adam_step(Params<double>&, const Params<double>&, AdamState<double>&, double);

}  // namespace sinr
