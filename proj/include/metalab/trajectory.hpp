#pragma once

// Inner-loop execution on one task with the full parameter trajectory kept.

#include "metalab/linalg.hpp"
#include "metalab/nn.hpp"
#include "metalab/selection_mask.hpp"

#include <functional>
#include <span>
#include <vector>

namespace metalab::trajectory {

using nn::ParamVector;

struct TrajectoryRecord {
  ParamVector start;                   // meta-parameters at task entry
  linalg::TrajectoryMatrix snapshots;  // column j = parameters after j+1 steps
  std::vector<double> step_losses;     // training loss evaluated before each step
  int selected_count = 0;              // samples contributing to each step

  const ParamVector& start_point() const { return start; }
  ParamVector endpoint() const { return snapshots.columns.col(snapshots.steps() - 1); }
};

ParamVector flatten(const std::vector<nn::LayerParams>& layers);
std::vector<nn::LayerParams> unflatten(const ParamVector& params, const nn::NetworkSpec& spec);

/// Loss and gradient at the given parameters for inner step `step`.
using Objective = std::function<nn::LossAndGrad(const ParamVector& params, int step)>;

/// Generic recorder: `steps` optimizer steps on an arbitrary objective,
/// snapshotting the parameters after each one.
TrajectoryRecord run_objective(const ParamVector& init, const Objective& objective, int steps,
                               const nn::OptimizerState& opt);

/// Runs `steps` full-batch optimizer steps from `init` on the (optionally
/// masked) training loss. `opt` is copied, so moments start from the state
/// passed in. Throws std::invalid_argument for steps < 2 or a mask that
/// selects nothing, NumericError on a non-finite loss.
TrajectoryRecord run_inner_loop(const ParamVector& init, const nn::NetworkSpec& spec,
                                const nn::Batch& train, int steps, const nn::OptimizerState& opt,
                                const ispl::SelectionMask* mask = nullptr);

/// Same as run_inner_loop, with a separate mask per step (masks.size() ==
/// steps) or one mask shared by all steps (masks.size() == 1).
TrajectoryRecord run_inner_loop_scheduled(const ParamVector& init, const nn::NetworkSpec& spec,
                                          const nn::Batch& train, int steps,
                                          const nn::OptimizerState& opt,
                                          std::span<const ispl::SelectionMask> masks);

/// Plain adaptation without recording (used by evaluation); steps may be 0.
ParamVector adapt(const ParamVector& init, const nn::NetworkSpec& spec, const nn::Batch& train,
                  int steps, const nn::OptimizerState& opt);

}  // namespace metalab::trajectory
