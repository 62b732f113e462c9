#pragma once

// Outer-loop meta-updates: Reptile, Eigen-Reptile (principal direction of
// the inner-loop trajectory), and two baseline directions.

#include "metalab/ispl.hpp"
#include "metalab/linalg.hpp"
#include "metalab/nn.hpp"
#include "metalab/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace metalab::meta {

using nn::ParamVector;

enum class Algorithm { reptile, eigen_reptile, avg_gradient_dir, avg_weights_dir };
enum class BetaSchedule { constant, linear_decay };

// flip_then_project fixes the eigenvector sign against the mean motion
// before projecting the step differences, so the stepsize is measured along
// the motion-aligned direction. project_then_flip projects with the raw
// eigenvector and flips afterwards (kept for ablation).
enum class SignOrder { flip_then_project, project_then_flip };

Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(Algorithm a);
BetaSchedule parse_beta_schedule(std::string_view name);
SignOrder parse_sign_order(std::string_view name);

struct TaskDirection {
  ParamVector e_signed;  // unit, unless degenerate
  double zeta = 0.0;
  double nu = 0.0;
  bool degenerate = false;
};

struct MetaConfig {
  Algorithm algorithm = Algorithm::eigen_reptile;
  double beta = 1.0;
  int meta_batch = 10;
  int inner_steps = 5;
  int outer_iterations = 1000;
  BetaSchedule beta_schedule = BetaSchedule::constant;
  SignOrder sign_order = SignOrder::flip_then_project;

  void validate() const;
  /// Outer step size at 0-based iteration t.
  double beta_at(std::int64_t t) const;
};

/// phi + beta * (phi_tilde - phi).
ParamVector reptile_update(const ParamVector& phi, const ParamVector& phi_tilde, double beta);

/// Averaged long-range snapshot difference
/// (1/floor(n/2)) * sum_{i=1..floor(n/2)} (w_{n-i+1} - w_i).
ParamVector mean_motion(const linalg::TrajectoryMatrix& w);

/// Sum of consecutive snapshot differences projected on e.
double projected_stepsize(const linalg::TrajectoryMatrix& w, const ParamVector& e);

TaskDirection task_direction(const trajectory::TrajectoryRecord& rec,
                             SignOrder order = SignOrder::flip_then_project);

/// Sign correction and stepsize for a given raw unit direction `e`; the
/// result does not depend on the sign of `e` under flip_then_project.
TaskDirection signed_direction(const trajectory::TrajectoryRecord& rec, const ParamVector& e, double zeta,
                               SignOrder order = SignOrder::flip_then_project);

/// phi + beta * (sum nu / B) * (1/B) sum zeta_i e_i, with B = dirs.size() and
/// degenerate directions contributing nothing. Returns phi unchanged (with a
/// warning) when every direction is degenerate.
ParamVector eigen_reptile_meta_update(const ParamVector& phi, std::span<const TaskDirection> dirs,
                                      double beta);

/// avg_gradient_dir: normalized mean of consecutive differences.
/// avg_weights_dir: normalized (mean snapshot - start). zeta = 1.
/// The same mean-motion sign rule and nu projection as task_direction apply.
TaskDirection baseline_direction(const trajectory::TrajectoryRecord& rec, Algorithm kind);

// --- Outer loop -----------------------------------------------------------

struct TaskSample {
  nn::Batch train;
  nn::Batch test;
};

/// Deterministic task stream: the task for (iteration, index) depends only on
/// those indices and the source's own seed.
class TaskSource {
 public:
  virtual ~TaskSource() = default;
  virtual TaskSample meta_train_task(std::uint64_t iteration, std::uint64_t index) const = 0;
};

struct EvalResult {
  double metric = 0.0;
  double ci95 = 0.0;
};

struct OuterLoopSettings {
  MetaConfig meta;
  nn::NetworkSpec network;
  nn::InitScheme init_scheme = nn::InitScheme::glorot_uniform;
  nn::OptimizerState inner_optimizer = nn::OptimizerState::sgd(0.02);
  std::optional<ispl::ISPLConfig> ispl;
  std::uint64_t seed = 1;
  int threads = 1;
  int eval_interval = 0;  // 0 disables periodic evaluation
  std::function<EvalResult(const ParamVector&)> evaluator;
  bool higher_is_better = false;  // eval metric direction (accuracy vs loss)
};

struct IterationMetrics {
  std::int64_t iteration = 0;
  double meta_train_loss = 0.0;
  std::optional<double> eval_metric;
  std::optional<double> eval_ci95;
  std::optional<double> gamma;
  std::optional<double> selected_fraction;
  std::optional<double> zeta_mean;
};

struct TrainingArtifacts {
  std::vector<IterationMetrics> metrics;
  ParamVector final_params;
  ParamVector best_params;
  std::int64_t best_iteration = -1;
  std::optional<double> best_metric;
  std::optional<double> final_metric;
};

/// One outer update; exposed so callers and tests can drive a single step.
struct StepResult {
  ParamVector phi;
  IterationMetrics metrics;
};

StepResult outer_step(const OuterLoopSettings& settings, const TaskSource& tasks,
                      const ParamVector& phi, std::int64_t iteration);

/// Runs settings.meta.outer_iterations outer steps from `init` (or from a
/// seeded Glorot initialization when `init` is null).
TrainingArtifacts outer_loop(const OuterLoopSettings& settings, const TaskSource& tasks,
                             const ParamVector* init = nullptr);

/// Runs fn(i) for i in [0, count) on up to `threads` threads.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace metalab::meta
