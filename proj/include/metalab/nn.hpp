#pragma once

// Dense feedforward networks over a flat parameter vector: forward pass,
// exact backpropagation, MSE / cross-entropy losses, SGD and Adam.
//
// Parameter layout (per layer, input side first): the out x in weight matrix
// in column-major order, followed by the out biases.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace metalab::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Flat vector of every network parameter (weights and biases, all layers).
using ParamVector = Eigen::VectorXd;

enum class Activation { tanh, relu, linear };
enum class OutputHead { regression_linear, classification_softmax };
enum class LossKind { mse, cross_entropy };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);

struct NetworkSpec {
  std::vector<int> layer_sizes;         // input dim first, output dim last
  std::vector<Activation> activations;  // one per hidden layer
  OutputHead head = OutputHead::regression_linear;

  static NetworkSpec mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                         Activation act, OutputHead head);

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  std::size_t param_count() const;

  /// Throws std::invalid_argument when the shape description is inconsistent.
  void validate() const;
};

/// Loss kind implied by the output head.
LossKind default_loss(const NetworkSpec& spec);

/// Structured (per-layer) view of the parameters.
struct LayerParams {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct Batch {
  Matrix inputs;            // samples x input_dim
  Matrix targets;           // samples x output_dim (regression)
  std::vector<int> labels;  // class indices (classification)

  Eigen::Index size() const { return inputs.rows(); }
};

// glorot_uniform: weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
// fan_in_uniform: weights and biases in +-1/sqrt(fan_in) (the PyTorch
// Linear default).
enum class InitScheme { glorot_uniform, fan_in_uniform };

InitScheme parse_init_scheme(std::string_view name);
std::string_view to_string(InitScheme s);

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed,
                        InitScheme scheme = InitScheme::glorot_uniform);

Matrix forward(const ParamVector& params, const NetworkSpec& spec, const Matrix& inputs);
Matrix forward(const std::vector<LayerParams>& layers, const NetworkSpec& spec, const Matrix& inputs);

/// Loss of each sample (squared error summed over outputs, or negative
/// log-likelihood of the label).
Vector per_sample_loss(const ParamVector& params, const NetworkSpec& spec, const Batch& batch,
                       LossKind kind);

// `weights`, when non-empty, holds one nonnegative weight per sample and the
// loss becomes the weighted mean sum(w_i L_i) / sum(w_i). A 0/1 weight vector
// therefore averages over the selected samples only.
double loss(const ParamVector& params, const NetworkSpec& spec, const Batch& batch, LossKind kind,
            std::span<const double> weights = {});

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

LossAndGrad loss_and_grad(const ParamVector& params, const NetworkSpec& spec, const Batch& batch,
                          LossKind kind, std::span<const double> weights = {});

ParamVector grad(const ParamVector& params, const NetworkSpec& spec, const Batch& batch,
                 LossKind kind, std::span<const double> weights = {});

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.02;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr, double beta1 = 0.0);
};

/// In-place update; throws NumericError on non-finite gradient entries.
void apply_step(ParamVector& params, const ParamVector& grad, OptimizerState& state);

std::pair<ParamVector, OptimizerState> step(ParamVector params, const ParamVector& grad,
                                            OptimizerState state);

bool all_finite(const Vector& v);

}  // namespace metalab::nn
