#include "metalab/errors.hpp"
#include "metalab/nn.hpp"
#include "metalab/rng.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace metalab;
using namespace metalab::nn;
using metalab::testing::GradCase;
using metalab::testing::max_relative_fd_error;
using metalab::testing::random_grad_case;

namespace {

NetworkSpec affine_1d() {
  NetworkSpec s;
  s.layer_sizes = {1, 1};
  s.head = OutputHead::regression_linear;
  return s;
}

}  // namespace

TEST_CASE("parameter count of the 1-64-64-1 regressor") {
  const auto spec = NetworkSpec::mlp(1, {64, 64}, 1, Activation::tanh, OutputHead::regression_linear);
  // 1*64+64 + 64*64+64 + 64*1+1 counted by hand.
  CHECK(spec.param_count() == 4353);
}

TEST_CASE("init_params is seeded and leaves biases at zero") {
  const auto spec = NetworkSpec::mlp(3, {5, 4}, 2, Activation::tanh, OutputHead::classification_softmax);
  const ParamVector a = init_params(spec, 42);
  const ParamVector b = init_params(spec, 42);
  CHECK(a == b);
  CHECK(a != init_params(spec, 43));
  const auto layers = [&] {
    std::vector<std::pair<int, int>> shapes;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l)
      shapes.emplace_back(spec.layer_sizes[l], spec.layer_sizes[l + 1]);
    return shapes;
  }();
  Eigen::Index offset = 0;
  for (auto [in, out] : layers) {
    const double limit = std::sqrt(6.0 / (in + out));
    CHECK(a.segment(offset, in * out).cwiseAbs().maxCoeff() <= limit);
    offset += in * out;
    CHECK(a.segment(offset, out).isZero(0.0));
    offset += out;
  }
}

TEST_CASE("fan-in uniform init draws weights and biases within 1/sqrt(fan_in)") {
  const auto spec = NetworkSpec::mlp(4, {16}, 1, Activation::tanh, OutputHead::regression_linear);
  const ParamVector p = init_params(spec, 3, InitScheme::fan_in_uniform);
  CHECK(p == init_params(spec, 3, InitScheme::fan_in_uniform));
  CHECK(p != init_params(spec, 3));
  // Layer 1: 16x4 weights then 16 biases; layer 2: 1x16 weights then 1 bias.
  CHECK(p.segment(0, 80).cwiseAbs().maxCoeff() <= 0.5);
  CHECK_FALSE(p.segment(64, 16).isZero(0.0));
  CHECK(p.segment(80, 17).cwiseAbs().maxCoeff() <= 0.25);
  CHECK(p(96) != 0.0);
  CHECK(parse_init_scheme("fan-in-uniform") == InitScheme::fan_in_uniform);
  CHECK(to_string(InitScheme::glorot_uniform) == "glorot-uniform");
  CHECK_THROWS_AS(parse_init_scheme("he"), std::invalid_argument);
}

TEST_CASE("forward of an affine layer") {
  const auto spec = affine_1d();
  ParamVector p(2);
  p << 2.0, 1.0;
  Matrix x(1, 1);
  x << 3.0;
  CHECK(forward(p, spec, x)(0, 0) == 7.0);
}

TEST_CASE("softmax rows sum to one") {
  const auto spec = NetworkSpec::mlp(4, {8}, 5, Activation::relu, OutputHead::classification_softmax);
  Rng rng(7);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x(6, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    const Matrix out = forward(init_params(spec, rng()), spec, x);
    for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK(std::abs(out.row(r).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("tanh network with zero biases maps zero to zero") {
  const auto spec = NetworkSpec::mlp(1, {64, 64}, 1, Activation::tanh, OutputHead::regression_linear);
  const Matrix x = Matrix::Zero(1, 1);
  CHECK(forward(init_params(spec, 3), spec, x)(0, 0) == 0.0);
}

TEST_CASE("loss values") {
  SUBCASE("mse of exact predictions is zero") {
    const auto spec = affine_1d();
    ParamVector p(2);
    p << 2.0, 1.0;
    Batch b;
    b.inputs = Matrix(3, 1);
    b.inputs << -1, 0, 2;
    b.targets = (2.0 * b.inputs.array() + 1.0).matrix();
    CHECK(loss(p, spec, b, LossKind::mse) == 0.0);
  }
  SUBCASE("cross-entropy of a uniform 5-class prediction is ln 5") {
    const auto spec = NetworkSpec::mlp(3, {4}, 5, Activation::tanh, OutputHead::classification_softmax);
    const ParamVector zero = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
    Batch b;
    b.inputs = Matrix::Ones(4, 3);
    b.labels = {0, 1, 2, 4};
    CHECK(loss(zero, spec, b, LossKind::cross_entropy) == doctest::Approx(std::log(5.0)).epsilon(1e-15));
  }
  SUBCASE("mse averages per-sample squared errors") {
    const auto spec = affine_1d();
    ParamVector p(2);
    p << 2.0, 1.0;  // predictions 1 and 3 at inputs 0 and 1
    Batch b;
    b.inputs = Matrix(2, 1);
    b.inputs << 0, 1;
    b.targets = Matrix::Ones(2, 1);
    CHECK(loss(p, spec, b, LossKind::mse) == 2.0);
  }
}

TEST_CASE("loss is invariant to sample order") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    GradCase c = random_grad_case(seed);
    Batch shuffled = c.batch;
    const Eigen::Index n = c.batch.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      shuffled.inputs.row(i) = c.batch.inputs.row(n - 1 - i);
      if (c.batch.targets.size()) shuffled.targets.row(i) = c.batch.targets.row(n - 1 - i);
      if (!c.batch.labels.empty()) shuffled.labels[static_cast<std::size_t>(i)] = c.batch.labels[static_cast<std::size_t>(n - 1 - i)];
    }
    CHECK(loss(c.params, c.spec, shuffled, c.kind) ==
          doctest::Approx(loss(c.params, c.spec, c.batch, c.kind)).epsilon(1e-13));
  }
}

TEST_CASE("gradient matches central finite differences") {
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    const GradCase c = random_grad_case(seed);
    CAPTURE(seed);
    CHECK(max_relative_fd_error(c) < 1e-5);
  }
}

TEST_CASE("gradient vanishes at an exact linear fit") {
  const auto spec = NetworkSpec::mlp(2, {3}, 1, Activation::linear, OutputHead::regression_linear);
  const ParamVector p = init_params(spec, 11);
  Batch b;
  b.inputs = Matrix(5, 2);
  b.inputs << 1, 2, -1, 0.5, 3, -2, 0, 0, 0.25, 1;
  b.targets = forward(p, spec, b.inputs);
  CHECK(grad(p, spec, b, LossKind::mse).norm() < 1e-10);
}

TEST_CASE("weighted loss and gradient are linear in the sample weights") {
  const GradCase c = random_grad_case(9);
  const Eigen::Index n = c.batch.size();
  if (n < 2) return;
  std::vector<double> first(static_cast<std::size_t>(n), 0.0), second(static_cast<std::size_t>(n), 0.0), mixed(static_cast<std::size_t>(n), 0.0);
  first[0] = 1.0;
  second[1] = 1.0;
  mixed[0] = 0.25;
  mixed[1] = 0.75;
  const auto a = loss_and_grad(c.params, c.spec, c.batch, c.kind, first);
  const auto b = loss_and_grad(c.params, c.spec, c.batch, c.kind, second);
  const auto m = loss_and_grad(c.params, c.spec, c.batch, c.kind, mixed);
  CHECK(m.loss == doctest::Approx(0.25 * a.loss + 0.75 * b.loss).epsilon(1e-13));
  CHECK((m.grad - (0.25 * a.grad + 0.75 * b.grad)).norm() < 1e-12 * (1.0 + m.grad.norm()));
  // Scaling every weight by a constant leaves the normalized loss unchanged.
  std::vector<double> scaled = mixed;
  for (auto& w : scaled) w *= 7.0;
  CHECK(loss(c.params, c.spec, c.batch, c.kind, scaled) == doctest::Approx(m.loss).epsilon(1e-13));
}

TEST_CASE("optimizer steps") {
  SUBCASE("sgd") {
    auto [p, s] = step(ParamVector::Zero(2), (ParamVector(2) << 1.0, 2.0).finished(), OptimizerState::sgd(0.1));
    CHECK(p(0) == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(p(1) == doctest::Approx(-0.2).epsilon(1e-15));
    CHECK(s.step_count == 1);
  }
  SUBCASE("adam with zero first-moment decay moves by lr * sign(g) on the first step") {
    const ParamVector g = (ParamVector(3) << 0.5, -2.0, 1e-3).finished();
    auto [p, s] = step(ParamVector::Zero(3), g, OptimizerState::adam(0.01, 0.0));
    for (Eigen::Index i = 0; i < 3; ++i) {
      // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
      CHECK(p(i) == doctest::Approx(-0.01 * g(i) / (std::abs(g(i)) + 1e-8)).epsilon(1e-14));
      CHECK((p(i) < 0) == (g(i) > 0));
    }
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    const ParamVector p0 = (ParamVector(2) << 0.3, -0.7).finished();
    const ParamVector g = (ParamVector(2) << 5.0, -1.0).finished();
    CHECK(step(p0, g, OptimizerState::sgd(0.0)).first == p0);
    CHECK(step(p0, g, OptimizerState::adam(0.0)).first == p0);
  }
  SUBCASE("non-finite gradient is rejected") {
    ParamVector p = ParamVector::Zero(2);
    OptimizerState s = OptimizerState::sgd(0.1);
    ParamVector g(2);
    g << 1.0, std::nan("");
    CHECK_THROWS_AS(apply_step(p, g, s), NumericError);
  }
}

TEST_CASE("invalid inputs are rejected") {
  const auto spec = NetworkSpec::mlp(2, {3}, 3, Activation::tanh, OutputHead::classification_softmax);
  const ParamVector p = init_params(spec, 1);
  Batch empty;
  empty.inputs = Matrix(0, 2);
  CHECK_THROWS_AS(loss(p, spec, empty, LossKind::cross_entropy), std::invalid_argument);
  Batch wrong_dim;
  wrong_dim.inputs = Matrix::Zero(2, 3);
  wrong_dim.labels = {0, 1};
  CHECK_THROWS_AS(loss(p, spec, wrong_dim, LossKind::cross_entropy), std::invalid_argument);
  Batch bad_label;
  bad_label.inputs = Matrix::Zero(1, 2);
  bad_label.labels = {3};
  CHECK_THROWS_AS(loss(p, spec, bad_label, LossKind::cross_entropy), std::invalid_argument);
  CHECK_THROWS_AS(loss(p, spec, bad_label, LossKind::mse), std::invalid_argument);
  CHECK_THROWS_AS(forward(ParamVector::Zero(3), spec, Matrix::Zero(1, 2)), std::invalid_argument);
  NetworkSpec bad;
  bad.layer_sizes = {2, 3, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
