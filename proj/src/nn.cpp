#include "metalab/nn.hpp"

#include "metalab/errors.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace metalab::nn {
namespace {

using ConstMatrixMap = Eigen::Map<const Matrix>;
using ConstVectorMap = Eigen::Map<const Vector>;

struct LayerShape {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Eigen::Index weight_offset = 0;
  Eigen::Index bias_offset = 0;
};

std::vector<LayerShape> layer_shapes(const NetworkSpec& spec) {
  std::vector<LayerShape> shapes;
  shapes.reserve(spec.layer_count());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    LayerShape s;
    s.in = spec.layer_sizes[l];
    s.out = spec.layer_sizes[l + 1];
    s.weight_offset = offset;
    s.bias_offset = offset + s.in * s.out;
    offset = s.bias_offset + s.out;
    shapes.push_back(s);
  }
  return shapes;
}

void apply_activation(Matrix& z, Activation act) {
  switch (act) {
    case Activation::tanh: z = z.array().tanh(); break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::linear: break;
  }
}

// Row-wise softmax in place.
void softmax_rows(Matrix& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - mx).exp();
    z.row(r) /= z.row(r).sum();
  }
}

void check_params(const ParamVector& params, const NetworkSpec& spec) {
  if (static_cast<std::size_t>(params.size()) != spec.param_count())
    throw std::invalid_argument("parameter vector length " + std::to_string(params.size()) +
                                " does not match network parameter count " +
                                std::to_string(spec.param_count()));
}

void check_inputs(const NetworkSpec& spec, const Matrix& inputs) {
  if (inputs.cols() != spec.input_dim())
    throw std::invalid_argument("input dimension " + std::to_string(inputs.cols()) +
                                " does not match network input " + std::to_string(spec.input_dim()));
}

// Forward pass keeping every layer's post-activation output. activations[0]
// is the input; the last entry holds raw logits / linear outputs.
std::vector<Matrix> forward_cached(const ParamVector& params, const NetworkSpec& spec,
                                   const Matrix& inputs) {
  const auto shapes = layer_shapes(spec);
  std::vector<Matrix> acts;
  acts.reserve(shapes.size() + 1);
  acts.push_back(inputs);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    ConstMatrixMap w(params.data() + s.weight_offset, s.out, s.in);
    ConstVectorMap b(params.data() + s.bias_offset, s.out);
    Matrix z(acts.back().rows(), s.out);
    z.noalias() = acts.back() * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < shapes.size()) apply_activation(z, spec.activations[l]);
    acts.push_back(std::move(z));
  }
  return acts;
}

void check_batch(const NetworkSpec& spec, const Batch& batch, LossKind kind,
                 std::span<const double> weights) {
  if (batch.size() == 0) throw std::invalid_argument("loss on an empty batch");
  check_inputs(spec, batch.inputs);
  if (kind == LossKind::mse) {
    if (spec.head != OutputHead::regression_linear)
      throw std::invalid_argument("mse loss requires a regression head");
    if (batch.targets.rows() != batch.size() || batch.targets.cols() != spec.output_dim())
      throw std::invalid_argument("regression targets shape mismatch");
  } else {
    if (spec.head != OutputHead::classification_softmax)
      throw std::invalid_argument("cross-entropy loss requires a softmax head");
    if (static_cast<Eigen::Index>(batch.labels.size()) != batch.size())
      throw std::invalid_argument("label count does not match sample count");
    for (int y : batch.labels)
      if (y < 0 || y >= spec.output_dim()) throw std::invalid_argument("label out of range");
  }
  if (!weights.empty()) {
    if (static_cast<Eigen::Index>(weights.size()) != batch.size())
      throw std::invalid_argument("sample weight count does not match sample count");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("sample weights must be nonnegative");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("sample weights select no samples");
  }
}

// Per-sample loss from the raw network output, plus dL_i/d(output row i).
Vector sample_losses(const Matrix& out, const Batch& batch, LossKind kind, Matrix* d_out) {
  const Eigen::Index n = out.rows();
  Vector losses(n);
  if (d_out) d_out->resize(out.rows(), out.cols());
  if (kind == LossKind::mse) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto diff = (out.row(i) - batch.targets.row(i)).eval();
      losses(i) = diff.squaredNorm();
      if (d_out) d_out->row(i) = 2.0 * diff;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = out.row(i).maxCoeff();
      const auto shifted = (out.row(i).array() - mx).eval();
      const double sum_exp = shifted.exp().sum();
      const double lse = std::log(sum_exp);
      const int y = batch.labels[static_cast<std::size_t>(i)];
      losses(i) = lse - shifted(y);
      if (d_out) {
        d_out->row(i) = shifted.exp() / sum_exp;
        (*d_out)(i, y) -= 1.0;
      }
    }
  }
  return losses;
}

Vector normalized_weights(Eigen::Index n, std::span<const double> weights) {
  Vector w(n);
  if (weights.empty()) {
    w.setConstant(1.0 / static_cast<double>(n));
  } else {
    double total = 0.0;
    for (double x : weights) total += x;
    for (Eigen::Index i = 0; i < n; ++i) w(i) = weights[static_cast<std::size_t>(i)] / total;
  }
  return w;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  return "?";
}

NetworkSpec NetworkSpec::mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                             Activation act, OutputHead head) {
  NetworkSpec spec;
  spec.layer_sizes.push_back(input_dim);
  for (int h : hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(output_dim);
  spec.activations.assign(hidden.size(), act);
  spec.head = head;
  spec.validate();
  return spec;
}

std::size_t NetworkSpec::param_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    count += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
  return count;
}

void NetworkSpec::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("network needs at least two layers");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  if (activations.size() != layer_sizes.size() - 2)
    throw std::invalid_argument("activation count must equal hidden layer count");
  if (head == OutputHead::classification_softmax && output_dim() < 2)
    throw std::invalid_argument("softmax head needs at least two classes");
}

LossKind default_loss(const NetworkSpec& spec) {
  return spec.head == OutputHead::classification_softmax ? LossKind::cross_entropy : LossKind::mse;
}

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "glorot-uniform") return InitScheme::glorot_uniform;
  if (name == "fan-in-uniform") return InitScheme::fan_in_uniform;
  throw std::invalid_argument("unknown init scheme '" + std::string(name) + "'");
}

std::string_view to_string(InitScheme s) {
  return s == InitScheme::glorot_uniform ? "glorot-uniform" : "fan-in-uniform";
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed, InitScheme scheme) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  for (const auto& s : layer_shapes(spec)) {
    if (scheme == InitScheme::glorot_uniform) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index k = 0; k < s.in * s.out; ++k) p(s.weight_offset + k) = dist(rng);
    } else {
      const double limit = 1.0 / std::sqrt(static_cast<double>(s.in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index k = 0; k < s.in * s.out + s.out; ++k) p(s.weight_offset + k) = dist(rng);
    }
  }
  return p;
}

Matrix forward(const ParamVector& params, const NetworkSpec& spec, const Matrix& inputs) {
  spec.validate();
  check_params(params, spec);
  check_inputs(spec, inputs);
  auto acts = forward_cached(params, spec, inputs);
  Matrix out = std::move(acts.back());
  if (spec.head == OutputHead::classification_softmax) softmax_rows(out);
  return out;
}

Matrix forward(const std::vector<LayerParams>& layers, const NetworkSpec& spec, const Matrix& inputs) {
  ParamVector flat(static_cast<Eigen::Index>(spec.param_count()));
  if (layers.size() != spec.layer_count()) throw std::invalid_argument("layer count mismatch");
  Eigen::Index offset = 0;
  for (const auto& layer : layers) {
    const auto nw = layer.weight.size();
    if (offset + nw + layer.bias.size() > flat.size())
      throw std::invalid_argument("structured parameters exceed network size");
    flat.segment(offset, nw) = layer.weight.reshaped();
    offset += nw;
    flat.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  if (offset != flat.size()) throw std::invalid_argument("structured parameters shape mismatch");
  return forward(flat, spec, inputs);
}

Vector per_sample_loss(const ParamVector& params, const NetworkSpec& spec, const Batch& batch,
                       LossKind kind) {
  spec.validate();
  check_params(params, spec);
  check_batch(spec, batch, kind, {});
  const auto acts = forward_cached(params, spec, batch.inputs);
  return sample_losses(acts.back(), batch, kind, nullptr);
}

double loss(const ParamVector& params, const NetworkSpec& spec, const Batch& batch, LossKind kind,
            std::span<const double> weights) {
  spec.validate();
  check_params(params, spec);
  check_batch(spec, batch, kind, weights);
  const auto acts = forward_cached(params, spec, batch.inputs);
  const Vector losses = sample_losses(acts.back(), batch, kind, nullptr);
  const double value = normalized_weights(batch.size(), weights).dot(losses);
  if (!std::isfinite(value)) throw NumericError("non-finite loss");
  return value;
}

LossAndGrad loss_and_grad(const ParamVector& params, const NetworkSpec& spec, const Batch& batch,
                          LossKind kind, std::span<const double> weights) {
  spec.validate();
  check_params(params, spec);
  check_batch(spec, batch, kind, weights);
  const auto shapes = layer_shapes(spec);
  const auto acts = forward_cached(params, spec, batch.inputs);

  Matrix delta;
  const Vector losses = sample_losses(acts.back(), batch, kind, &delta);
  const Vector w = normalized_weights(batch.size(), weights);
  LossAndGrad result;
  result.loss = w.dot(losses);
  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss");
  delta.array().colwise() *= w.array();

  result.grad = ParamVector::Zero(params.size());
  for (std::size_t l = shapes.size(); l-- > 0;) {
    const auto& s = shapes[l];
    const Matrix& a_prev = acts[l];
    Eigen::Map<Matrix> gw(result.grad.data() + s.weight_offset, s.out, s.in);
    gw.noalias() = delta.transpose() * a_prev;
    result.grad.segment(s.bias_offset, s.out) = delta.colwise().sum().transpose();
    if (l == 0) break;
    ConstMatrixMap wmat(params.data() + s.weight_offset, s.out, s.in);
    Matrix d_prev = delta * wmat;
    switch (spec.activations[l - 1]) {
      case Activation::tanh: d_prev.array() *= 1.0 - a_prev.array().square(); break;
      case Activation::relu: d_prev.array() *= (a_prev.array() > 0.0).cast<double>(); break;
      case Activation::linear: break;
    }
    delta = std::move(d_prev);
  }
  return result;
}

ParamVector grad(const ParamVector& params, const NetworkSpec& spec, const Batch& batch,
                 LossKind kind, std::span<const double> weights) {
  return loss_and_grad(params, spec, batch, kind, weights).grad;
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::sgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1) {
  OptimizerState s;
  s.kind = OptimizerKind::adam;
  s.learning_rate = lr;
  s.beta1 = beta1;
  return s;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

void apply_step(ParamVector& params, const ParamVector& g, OptimizerState& state) {
  if (params.size() != g.size()) throw std::invalid_argument("gradient length mismatch");
  if (!g.allFinite()) throw NumericError("non-finite gradient entries");
  if (state.kind == OptimizerKind::sgd) {
    params.noalias() -= state.learning_rate * g;
    ++state.step_count;
    return;
  }
  if (state.first_moment.size() == 0) {
    state.first_moment = Vector::Zero(g.size());
    state.second_moment = Vector::Zero(g.size());
  }
  if (state.first_moment.size() != g.size()) throw std::invalid_argument("optimizer moment length mismatch");
  ++state.step_count;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * g;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * g.cwiseAbs2();
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

std::pair<ParamVector, OptimizerState> step(ParamVector params, const ParamVector& g,
                                            OptimizerState state) {
  apply_step(params, g, state);
  return {std::move(params), std::move(state)};
}

}  // namespace metalab::nn
