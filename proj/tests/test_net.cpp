#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sinr/binary_io.hpp"
#include "sinr/net.hpp"

using namespace sinr;
using doctest::Approx;

namespace {

NetConfig small_config(std::uint32_t hidden = 8, std::uint32_t blocks = 2, std::uint32_t species = 5) {
  NetConfig c;
  c.input_dim = 4;
  c.hidden_dim = hidden;
  c.n_residual_layers = blocks;
  c.n_species = species;
  c.dropout_p = 0.0;
  c.seed = 11;
  return c;
}

Matrix<float> random_inputs(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng = derive_rng(seed, 5);
  return Matrix<float>::NullaryExpr(rows, cols, [&] { return static_cast<float>(2.0 * uniform01(rng) - 1.0); });
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("sinr_test_" + name)).string();
}

}  // namespace

TEST_CASE("NetConfig validation") {
  NetConfig c = small_config();
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.hidden_dim = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.encoder = EncoderKind::identity;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.n_residual_layers = 0;
  CHECK_NOTHROW(c.validate());
  CHECK(c.feature_dim() == 4);
}

TEST_CASE("init_params is deterministic and seed dependent") {
  NetConfig c = small_config();
  const auto a = oracle::flatten(init_params(c).cast<double>());
  const auto b = oracle::flatten(init_params(c).cast<double>());
  CHECK(a == b);
  c.seed = 12;
  CHECK(oracle::flatten(init_params(c).cast<double>()) != a);

  const NetParams p = init_params(c);
  CHECK(p.input.bias.isZero());
  CHECK(p.head.bias.isZero());
}

TEST_CASE("initial weight variance matches the fan-in scheme") {
  NetConfig c = small_config(256, 1, 3);
  const NetParams p = init_params(c);
  const auto check = [](const Matrix<float>& w, double expected) {
    const double mean = w.cast<double>().mean();
    const double var = (w.cast<double>().array() - mean).square().mean();
    CHECK(std::abs(mean) < 0.05 * std::sqrt(expected) * 10);
    CHECK(var == Approx(expected).epsilon(0.2));
  };
  check(p.input.weight, init_variance(4));
  check(p.blocks[0].first.weight, init_variance(256));
}

TEST_CASE("forward basics") {
  NetConfig c = small_config();
  SUBCASE("all-zero parameters predict 0.5 everywhere") {
    const NetParams p = NetParams::zeros(c);
    const auto probs = predict(p, c, random_inputs(4, 7, 1));
    CHECK((probs.array() == 0.5f).all());
  }
  SUBCASE("eval mode is deterministic; dropout 0 makes train and eval agree") {
    const NetParams p = init_params(c);
    const auto x = random_inputs(4, 9, 2);
    CHECK(predict(p, c, x) == predict(p, c, x));
    Rng rng(1);
    CHECK(forward(p, c, x, Mode::train, &rng).probs == forward(p, c, x, Mode::eval).probs);
    const Matrix<float> diff = forward(p, c, x, Mode::eval).probs - predict(p, c, x);
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-6f);
  }
  SUBCASE("outputs are finite and strictly inside (0, 1)") {
    const NetParams p = init_params(c);
    const auto probs = predict(p, c, random_inputs(4, 50, 3));
    CHECK(probs.allFinite());
    CHECK((probs.array() > 0.0f).all());
    CHECK((probs.array() < 1.0f).all());
  }
  SUBCASE("dimension mismatch") {
    const NetParams p = init_params(c);
    CHECK_THROWS_AS(predict(p, c, random_inputs(3, 2, 4)), std::invalid_argument);
  }
  SUBCASE("train-mode dropout needs an rng and changes activations") {
    c.dropout_p = 0.5;
    const NetParams p = init_params(c);
    const auto x = random_inputs(4, 16, 5);
    CHECK_THROWS_AS(forward(p, c, x, Mode::train), std::invalid_argument);
    Rng rng(3);
    const auto tr = forward(p, c, x, Mode::train, &rng);
    const auto& mask = tr.blocks[0].mask;
    REQUIRE(mask.size() == 8 * 16);
    CHECK(((mask.array() == 0.0f) || (mask.array() == 2.0f)).all());
    CHECK((mask.array() == 0.0f).any());
  }
}

TEST_CASE("predictions do not depend on the rest of the batch") {
  const auto cfg = small_config(48, 2, 7);
  const auto p = init_params(cfg);
  const Matrix<float> x = random_inputs(4, 77, 12);
  const Matrix<float> all = predict(p, cfg, x);
  const Matrix<float> feats = features(p, cfg, x);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const Matrix<float> one = predict(p, cfg, Matrix<float>(x.col(i)));
    CHECK(one == all.col(i));
    CHECK(Matrix<float>(features(p, cfg, Matrix<float>(x.col(i)))) == feats.col(i));
  }
  const Matrix<float> reversed = x.rowwise().reverse();
  CHECK(Matrix<float>(predict(p, cfg, reversed).rowwise().reverse()) == all);
  CHECK(predict(p, cfg, Matrix<float>(x.rightCols(33))) == all.rightCols(33));
  CHECK(predict(p, cfg, Matrix<float>(4, 0)).cols() == 0);
}

TEST_CASE("forward matches hand evaluation for a single linear head") {
  // Identity encoder: logits = W x + b with a hand-set 2x4 head.
  NetConfig c;
  c.input_dim = 4;
  c.n_species = 2;
  c.n_residual_layers = 0;
  c.encoder = EncoderKind::identity;
  c.dropout_p = 0.0;
  NetParams p = NetParams::zeros(c);
  p.head.weight << 0.5f, -1.0f, 0.25f, 2.0f,
                   -0.3f, 0.1f, 0.7f, -0.2f;
  p.head.bias << 0.1f, -0.4f;
  Matrix<float> x(4, 1);
  x << 1.0f, 0.5f, -2.0f, 0.25f;
  // logit0 = 0.5 - 0.5 - 0.5 + 0.5 + 0.1 = 0.1
  // logit1 = -0.3 + 0.05 - 1.4 - 0.05 - 0.4 = -2.1
  const auto probs = predict(p, c, x);
  CHECK(probs(0, 0) == Approx(1.0 / (1.0 + std::exp(-0.1))).epsilon(1e-6));
  CHECK(probs(1, 0) == Approx(1.0 / (1.0 + std::exp(2.1))).epsilon(1e-6));
}

TEST_CASE("residual blocks with zero weights pass the first layer through") {
  NetConfig c = small_config(8, 3, 2);
  NetParams p = init_params(c);
  for (auto& b : p.blocks) {
    b.first.weight.setZero();
    b.second.weight.setZero();
  }
  const auto x = random_inputs(4, 6, 8);
  const auto tr = forward(p, c, x, Mode::eval);
  Matrix<float> first = p.input.weight * x;
  first.colwise() += p.input.bias;
  CHECK(tr.features == first.cwiseMax(0.0f));
}

TEST_CASE("backward") {
  SUBCASE("zero upstream gradient gives zero parameter gradient") {
    NetConfig c = small_config();
    const NetParams p = init_params(c);
    const auto x = random_inputs(4, 5, 9);
    const auto tr = forward(p, c, x, Mode::eval);
    const NetParams g = backward(p, c, tr, Matrix<float>(Matrix<float>::Zero(c.n_species, 5)));
    for (auto t : g.tensors()) {
      for (float v : t) CHECK(v == 0.0f);
    }
  }
  SUBCASE("shape mismatch") {
    NetConfig c = small_config();
    const NetParams p = init_params(c);
    const auto tr = forward(p, c, random_inputs(4, 5, 9), Mode::eval);
    CHECK_THROWS_AS(backward(p, c, tr, Matrix<float>(Matrix<float>::Zero(c.n_species, 4))), std::invalid_argument);
  }
  SUBCASE("matches central differences (hidden 8, 2 blocks, 5 species, f64)") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto prob = gradcheck::random_problem(seed, 8, 2, 5, 4);
      for (auto v : {LossVariant::an_full, LossVariant::an_ssdl, LossVariant::me_slds}) {
        CHECK(gradcheck::max_error(prob, v, 16.0) < 1e-6);
      }
      // At lambda = 2048 the loss is in the hundreds and a 1e-5 step loses
      // the small coordinates to cancellation; a wider step is accurate.
      CHECK(gradcheck::max_error(prob, LossVariant::an_full, 2048.0, 1e-3) < 1e-6);
      CHECK(gradcheck::max_error(prob, LossVariant::me_full, 2048.0, 1e-3) < 1e-6);
    }
  }
  SUBCASE("feature-space upstream gradient matches central differences") {
    const auto prob = gradcheck::random_problem(4, 6, 1, 3, 3);
    const Matrix<double> weights = Matrix<double>::Random(6, 3);
    auto f = [&](const Params<double>& params) {
      return (forward(params, prob.cfg, prob.x, Mode::eval).features.array() * weights.array()).sum();
    };
    const auto tr = forward(prob.params, prob.cfg, prob.x, Mode::eval);
    const Matrix<double> zero = Matrix<double>::Zero(3, 3);
    const auto g = backward(prob.params, prob.cfg, tr, zero, &weights);
    CHECK(oracle::max_relative_error(oracle::flatten(g), oracle::finite_difference(prob.params, f)) < 1e-6);
  }
  SUBCASE("dropout mask is threaded from forward to backward") {
    NetConfig c = small_config();
    c.dropout_p = 0.5;
    // Non-zero biases: with zero biases a fully dropped hidden column puts
    // the second layer exactly on the ReLU kink.
    Params<double> p = init_params(c).cast<double>();
    Rng rng(42);
    for (auto t : p.tensors()) {
      for (double& v : t) v += 0.05 * (2.0 * uniform01(rng) - 1.0);
    }
    const Matrix<double> x = random_inputs(4, 3, 10).cast<double>();
    const auto tr = forward(p, c, x, Mode::train, &rng);
    const Matrix<double> w = Matrix<double>::Random(c.n_species, 3);
    // With the mask frozen the network is a deterministic function of params.
    auto f = [&](const Params<double>& params) {
      Matrix<double> h = (params.input.weight * x).colwise() + params.input.bias;
      h = h.cwiseMax(0.0);
      for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        Matrix<double> a = ((params.blocks[i].first.weight * h).colwise() + params.blocks[i].first.bias).cwiseMax(0.0);
        a.array() *= tr.blocks[i].mask.array();
        Matrix<double> b = ((params.blocks[i].second.weight * a).colwise() + params.blocks[i].second.bias).cwiseMax(0.0);
        h += b;
      }
      Matrix<double> logits = (params.head.weight * h).colwise() + params.head.bias;
      Matrix<double> probs = (1.0 + (-logits.array()).exp()).inverse().matrix();
      return (probs.array() * w.array()).sum();
    };
    const auto g = backward(p, c, tr, w);
    CHECK(oracle::max_relative_error(oracle::flatten(g), oracle::finite_difference(p, f)) < 1e-6);
    auto bad = tr;
    bad.blocks[0].mask.resize(1, 1);
    CHECK_THROWS_AS(backward(p, c, bad, w), std::invalid_argument);
  }
}

TEST_CASE("head bias gradient of the full assume-negative loss") {
  // One example, identity encoder. d/db_j of L composed with sigmoid:
  //   positive j:  -(lambda / S) (1 - yhat_j)
  //   other j:      yhat_j / S
  //   plus yhat'_j / S from the random location.
  NetConfig c;
  c.input_dim = 4;
  c.n_species = 3;
  c.n_residual_layers = 0;
  c.encoder = EncoderKind::identity;
  c.dropout_p = 0.0;
  Params<double> p = Params<double>::zeros(c);
  p.head.weight << 0.2, -0.1, 0.4, 0.3, -0.5, 0.2, 0.1, 0.0, 0.3, 0.3, -0.2, 0.1;
  p.head.bias << 0.1, -0.2, 0.05;
  Matrix<double> x(4, 2);
  x << 0.3, -0.7, 0.9, 0.2, -0.1, 0.5, 0.4, -0.6;
  const double lambda = 7.0;
  const auto tr = forward(p, c, x, Mode::eval);
  BatchTargets t{{1}, 3};
  const auto loss = loss_an_full(tr.probs.leftCols(1), tr.probs.rightCols(1), t, lambda);
  Matrix<double> d(3, 2);
  d << loss.d_probs, loss.d_probs_rand;
  const auto g = backward(p, c, tr, d);
  for (int j = 0; j < 3; ++j) {
    const double y = tr.probs(j, 0), yr = tr.probs(j, 1);
    const double data_term = j == 1 ? -(lambda / 3.0) * (1.0 - y) : y / 3.0;
    CHECK(g.head.bias(j) == Approx(data_term + yr / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("adam_step") {
  NetConfig c;
  c.input_dim = 1;
  c.n_species = 1;
  c.n_residual_layers = 0;
  c.encoder = EncoderKind::identity;
  c.dropout_p = 0.0;

  SUBCASE("first step moves each parameter by about lr") {
    Params<double> p = Params<double>::zeros(c);
    p.head.weight(0, 0) = 1.0;
    Params<double> g = Params<double>::zeros(c);
    g.head.weight(0, 0) = 1.0;
    auto s = AdamState<double>::zeros(c);
    adam_step(p, g, s, 0.1);
    CHECK(s.t == 1);
    // m_hat = v_hat = 1, step = 0.1 / (1 + 1e-8)
    CHECK(p.head.weight(0, 0) == Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(p.head.bias(0) == 0.0);
  }
  SUBCASE("zero gradient from zero state leaves parameters unchanged") {
    Params<double> p = Params<double>::zeros(c);
    p.head.weight(0, 0) = 0.75;
    p.head.bias(0) = -2.0;
    auto s = AdamState<double>::zeros(c);
    adam_step(p, Params<double>::zeros(c), s, 0.1);
    CHECK(p.head.weight(0, 0) == 0.75);
    CHECK(p.head.bias(0) == -2.0);
  }
  SUBCASE("two steps with constant gradient follow the recurrence") {
    const double g0 = 0.3, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double theta = 2.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * g0;
      v = b2 * v + (1 - b2) * g0 * g0;
      theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    Params<double> p = Params<double>::zeros(c);
    p.head.weight(0, 0) = 2.0;
    Params<double> g = Params<double>::zeros(c);
    g.head.weight(0, 0) = g0;
    auto s = AdamState<double>::zeros(c);
    adam_step(p, g, s, lr);
    adam_step(p, g, s, lr);
    CHECK(std::abs(p.head.weight(0, 0) - theta) < 1e-12);
    CHECK(s.v.head.weight(0, 0) >= 0.0);
  }
  SUBCASE("non-finite gradients fail before any update") {
    Params<double> p = Params<double>::zeros(c);
    Params<double> g = Params<double>::zeros(c);
    g.head.bias(0) = std::nan("");
    auto s = AdamState<double>::zeros(c);
    CHECK_THROWS_AS(adam_step(p, g, s, 0.1), std::domain_error);
    CHECK(s.t == 0);
  }
}

TEST_CASE("model file round trip and errors") {
  NetConfig c = small_config(16, 2, 4);
  c.dropout_p = 0.3;
  Model m{c, init_params(c), {"a", "b", "c", "d"}};
  const std::string path = temp_path("model.sinr");
  save_model(path, m);

  const Model back = load_model(path);
  CHECK(back.config == m.config);
  CHECK(back.species_ids == m.species_ids);
  const auto x = random_inputs(4, 100, 21);
  CHECK(predict(back.params, back.config, x) == predict(m.params, m.config, x));

  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  CHECK(bytes.substr(0, 4) == "SINR");
  CHECK(bytes[4] == 1);
  const std::size_t expected_size = 4 + 4 + 4 * 4 + 8 + 8 + 4 + 4 * m.params.size() + 4 + 4 * (4 + 1);
  CHECK(bytes.size() == expected_size);

  auto expect_error = [](std::string data, FormatError::Kind kind) {
    std::istringstream is(data);
    try {
      read_model(is);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.kind() == kind);
    }
  };
  std::string bad = bytes;
  bad[0] = 'X';
  expect_error(bad, FormatError::Kind::bad_magic);
  bad = bytes;
  bad[4] = 2;
  expect_error(bad, FormatError::Kind::unsupported_version);
  expect_error(bytes.substr(0, bytes.size() / 2), FormatError::Kind::truncated);
  std::filesystem::remove(path);
}
