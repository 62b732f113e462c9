#pragma once

// Introspective self-paced learning: Q prior models trained on random subsets
// of a task's training set vote per-sample losses; samples whose mean vote
// loss reaches the threshold gamma are dropped before the inner loop.

#include "metalab/nn.hpp"
#include "metalab/selection_mask.hpp"
#include "metalab/trajectory.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace metalab::ispl {

using nn::ParamVector;

struct ISPLConfig {
  int prior_count = 2;               // Q
  double gamma0 = 10.0;              // initial threshold, loss units
  double mu = 0.6;                   // decrement per period
  int period = 1000;                 // outer iterations between decrements
  double prior_fraction = 0.5;       // |D_j| = ceil(prior_fraction * h)
  std::optional<int> prior_steps;    // m; defaults to the inner-step count
  bool per_inner_step_decay = false; // decay gamma by mu after every inner step instead

  void validate() const;
};

/// Trains `cfg.prior_count` priors from `phi_star`, each for `prior_steps`
/// steps on an independent uniform subset (without replacement).
std::vector<ParamVector> build_priors(const ParamVector& phi_star, const nn::NetworkSpec& spec,
                                      const nn::Batch& train, const ISPLConfig& cfg,
                                      const nn::OptimizerState& opt, int prior_steps,
                                      std::uint64_t seed);

/// Mean over priors of each sample's loss.
std::vector<double> vote_losses(std::span<const ParamVector> priors, const nn::NetworkSpec& spec,
                                const nn::Batch& train);

/// keep_i = 1 iff mean_loss_i < gamma. When nothing passes, the single
/// lowest-loss sample (lowest index on ties) is kept.
SelectionMask select(std::span<const double> mean_losses, double gamma);

/// max(0, gamma0 - mu * floor(iteration / period)).
double gamma_at(std::int64_t iteration, const ISPLConfig& cfg);

/// Priors, vote, selection with gamma_at(iteration), then the masked inner
/// loop. The mask(s) used are returned through `mask_out` when non-null.
trajectory::TrajectoryRecord ispl_inner_loop(const ParamVector& phi, const nn::NetworkSpec& spec,
                                             const nn::Batch& train, int steps,
                                             const nn::OptimizerState& opt, const ISPLConfig& cfg,
                                             std::int64_t iteration, std::uint64_t seed,
                                             SelectionMask* mask_out = nullptr);

}  // namespace metalab::ispl
