#include "metalab/trajectory.hpp"

#include "metalab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace metalab::trajectory {

ParamVector flatten(const std::vector<nn::LayerParams>& layers) {
  Eigen::Index total = 0;
  for (const auto& l : layers) total += l.weight.size() + l.bias.size();
  ParamVector flat(total);
  Eigen::Index offset = 0;
  for (const auto& l : layers) {
    flat.segment(offset, l.weight.size()) = l.weight.reshaped();
    offset += l.weight.size();
    flat.segment(offset, l.bias.size()) = l.bias;
    offset += l.bias.size();
  }
  return flat;
}

std::vector<nn::LayerParams> unflatten(const ParamVector& params, const nn::NetworkSpec& spec) {
  spec.validate();
  if (static_cast<std::size_t>(params.size()) != spec.param_count())
    throw std::invalid_argument("unflatten: vector length " + std::to_string(params.size()) +
                                " does not match parameter count " + std::to_string(spec.param_count()));
  std::vector<nn::LayerParams> layers;
  layers.reserve(spec.layer_count());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const Eigen::Index in = spec.layer_sizes[l];
    const Eigen::Index out = spec.layer_sizes[l + 1];
    nn::LayerParams lp;
    lp.weight = params.segment(offset, in * out).reshaped(out, in);
    offset += in * out;
    lp.bias = params.segment(offset, out);
    offset += out;
    layers.push_back(std::move(lp));
  }
  return layers;
}

TrajectoryRecord run_objective(const ParamVector& init, const Objective& objective, int steps,
                               const nn::OptimizerState& opt) {
  if (steps < 2) throw std::invalid_argument("inner loop needs at least 2 steps");
  nn::OptimizerState state = opt;
  TrajectoryRecord rec;
  rec.start = init;
  rec.snapshots.columns.resize(init.size(), steps);
  rec.step_losses.reserve(static_cast<std::size_t>(steps));
  ParamVector params = init;
  for (int j = 0; j < steps; ++j) {
    const auto lg = objective(params, j);
    if (!std::isfinite(lg.loss)) throw NumericError("non-finite inner-loop loss");
    nn::apply_step(params, lg.grad, state);
    rec.step_losses.push_back(lg.loss);
    rec.snapshots.columns.col(j) = params;
  }
  return rec;
}

TrajectoryRecord run_inner_loop_scheduled(const ParamVector& init, const nn::NetworkSpec& spec,
                                          const nn::Batch& train, int steps,
                                          const nn::OptimizerState& opt,
                                          std::span<const ispl::SelectionMask> masks) {
  if (steps < 2) throw std::invalid_argument("inner loop needs at least 2 steps");
  if (!masks.empty() && masks.size() != 1 && masks.size() != static_cast<std::size_t>(steps))
    throw std::invalid_argument("mask schedule must hold 1 or `steps` masks");
  for (const auto& m : masks) {
    if (static_cast<Eigen::Index>(m.size()) != train.size())
      throw std::invalid_argument("selection mask length does not match training sample count");
    if (m.selected_count() == 0)
      throw std::invalid_argument("selection mask selects zero samples");
  }

  const nn::LossKind kind = nn::default_loss(spec);
  std::vector<std::vector<double>> weights;
  for (const auto& m : masks) weights.push_back(m.as_weights());
  auto objective = [&](const ParamVector& params, int j) {
    if (weights.empty()) return nn::loss_and_grad(params, spec, train, kind);
    const auto& w = weights[weights.size() == 1 ? 0 : static_cast<std::size_t>(j)];
    return nn::loss_and_grad(params, spec, train, kind, w);
  };
  TrajectoryRecord rec = run_objective(init, objective, steps, opt);
  rec.selected_count = static_cast<int>(train.size());
  for (const auto& m : masks)
    rec.selected_count = std::min(rec.selected_count, static_cast<int>(m.selected_count()));
  return rec;
}

TrajectoryRecord run_inner_loop(const ParamVector& init, const nn::NetworkSpec& spec,
                                const nn::Batch& train, int steps, const nn::OptimizerState& opt,
                                const ispl::SelectionMask* mask) {
  if (mask) return run_inner_loop_scheduled(init, spec, train, steps, opt, std::span(mask, 1));
  return run_inner_loop_scheduled(init, spec, train, steps, opt, {});
}

ParamVector adapt(const ParamVector& init, const nn::NetworkSpec& spec, const nn::Batch& train,
                  int steps, const nn::OptimizerState& opt) {
  const nn::LossKind kind = nn::default_loss(spec);
  nn::OptimizerState state = opt;
  ParamVector params = init;
  for (int j = 0; j < steps; ++j) nn::apply_step(params, nn::grad(params, spec, train, kind), state);
  return params;
}

}  // namespace metalab::trajectory
