#include "metalab/meta.hpp"

#include "metalab/diagnostics.hpp"
#include "metalab/errors.hpp"
#include "metalab/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace metalab::meta {

Algorithm parse_algorithm(std::string_view name) {
  if (name == "reptile") return Algorithm::reptile;
  if (name == "eigen-reptile") return Algorithm::eigen_reptile;
  if (name == "avg-gradient-dir") return Algorithm::avg_gradient_dir;
  if (name == "avg-weights-dir") return Algorithm::avg_weights_dir;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "'");
}

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::reptile: return "reptile";
    case Algorithm::eigen_reptile: return "eigen-reptile";
    case Algorithm::avg_gradient_dir: return "avg-gradient-dir";
    case Algorithm::avg_weights_dir: return "avg-weights-dir";
  }
  return "?";
}

BetaSchedule parse_beta_schedule(std::string_view name) {
  if (name == "constant") return BetaSchedule::constant;
  if (name == "linear-decay") return BetaSchedule::linear_decay;
  throw std::invalid_argument("unknown beta schedule '" + std::string(name) + "'");
}

SignOrder parse_sign_order(std::string_view name) {
  if (name == "flip-then-project") return SignOrder::flip_then_project;
  if (name == "project-then-flip") return SignOrder::project_then_flip;
  throw std::invalid_argument("unknown sign order '" + std::string(name) + "'");
}

void MetaConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("meta: beta must be positive");
  if (meta_batch < 1) throw std::invalid_argument("meta: meta_batch must be >= 1");
  if (inner_steps < 2) throw std::invalid_argument("meta: inner_steps must be >= 2");
  if (outer_iterations < 1) throw std::invalid_argument("meta: outer_iterations must be >= 1");
}

double MetaConfig::beta_at(std::int64_t t) const {
  if (beta_schedule == BetaSchedule::constant) return beta;
  const double frac = static_cast<double>(t) / static_cast<double>(outer_iterations);
  return beta * std::max(0.0, 1.0 - frac);
}

ParamVector reptile_update(const ParamVector& phi, const ParamVector& phi_tilde, double beta) {
  if (phi.size() != phi_tilde.size()) throw std::invalid_argument("reptile_update: length mismatch");
  if (beta == 1.0) return phi_tilde;
  return phi + beta * (phi_tilde - phi);
}

ParamVector mean_motion(const linalg::TrajectoryMatrix& w) {
  const Eigen::Index n = w.steps();
  if (n < 2) throw std::invalid_argument("mean_motion needs n >= 2");
  const Eigen::Index half = n / 2;
  ParamVector v = ParamVector::Zero(w.dim());
  for (Eigen::Index i = 0; i < half; ++i) v += w.columns.col(n - 1 - i) - w.columns.col(i);
  return v / static_cast<double>(half);
}

double projected_stepsize(const linalg::TrajectoryMatrix& w, const ParamVector& e) {
  // The consecutive differences telescope to (w_n - w_1).
  return (w.columns.col(w.steps() - 1) - w.columns.col(0)).dot(e);
}

TaskDirection signed_direction(const trajectory::TrajectoryRecord& rec, const ParamVector& raw, double zeta,
                               SignOrder order) {
  TaskDirection out;
  ParamVector e = raw;
  const ParamVector v = mean_motion(rec.snapshots);
  if (order == SignOrder::project_then_flip) {
    out.nu = projected_stepsize(rec.snapshots, e);
    if (e.dot(v) < 0.0) e = -e;
  } else {
    if (e.dot(v) < 0.0) e = -e;
    out.nu = projected_stepsize(rec.snapshots, e);
  }
  out.e_signed = std::move(e);
  out.zeta = zeta;
  return out;
}

TaskDirection task_direction(const trajectory::TrajectoryRecord& rec, SignOrder order) {
  const auto [centered, mean] = linalg::mean_center(rec.snapshots);
  const auto md = linalg::principal_direction(centered);
  if (!md) {
    TaskDirection out;
    out.degenerate = true;
    out.e_signed = ParamVector::Zero(rec.snapshots.dim());
    return out;
  }
  return signed_direction(rec, md->direction, md->zeta, order);
}

ParamVector eigen_reptile_meta_update(const ParamVector& phi, std::span<const TaskDirection> dirs,
                                      double beta) {
  if (dirs.empty()) throw std::invalid_argument("eigen_reptile_meta_update: no task directions");
  const double b = static_cast<double>(dirs.size());
  ParamVector e_avg = ParamVector::Zero(phi.size());
  double nu_total = 0.0;
  bool any = false;
  for (const auto& d : dirs) {
    if (d.degenerate) continue;
    if (d.e_signed.size() != phi.size()) throw std::invalid_argument("task direction length mismatch");
    e_avg += d.zeta * d.e_signed;
    nu_total += d.nu;
    any = true;
  }
  if (!any) {
    warn("eigen_reptile_meta_update: every task direction is degenerate; meta-parameters unchanged");
    return phi;
  }
  e_avg /= b;
  return phi + (beta * nu_total / b) * e_avg;
}

TaskDirection baseline_direction(const trajectory::TrajectoryRecord& rec, Algorithm kind) {
  const auto& w = rec.snapshots;
  if (w.steps() < 2) throw std::invalid_argument("baseline_direction needs n >= 2");
  ParamVector e;
  if (kind == Algorithm::avg_gradient_dir) {
    e = (w.columns.col(w.steps() - 1) - w.columns.col(0)) / static_cast<double>(w.steps() - 1);
  } else if (kind == Algorithm::avg_weights_dir) {
    e = ParamVector(w.columns.rowwise().mean()) - rec.start;
  } else {
    throw std::invalid_argument("baseline_direction: not a baseline algorithm");
  }
  TaskDirection out;
  const double norm = e.norm();
  if (!(norm > 0.0)) {
    out.degenerate = true;
    out.e_signed = ParamVector::Zero(w.dim());
    return out;
  }
  e /= norm;
  if (e.dot(mean_motion(w)) < 0.0) e = -e;
  out.nu = projected_stepsize(w, e);
  out.zeta = 1.0;
  out.e_signed = std::move(e);
  return out;
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

StepResult outer_step(const OuterLoopSettings& settings, const TaskSource& tasks,
                      const ParamVector& phi, std::int64_t iteration) {
  const auto& meta = settings.meta;
  const auto batch = static_cast<std::size_t>(meta.meta_batch);
  const nn::LossKind kind = nn::default_loss(settings.network);

  struct TaskOutcome {
    trajectory::TrajectoryRecord record;
    double test_loss = 0.0;
    double selected_fraction = 1.0;
  };
  std::vector<TaskOutcome> outcomes(batch);

  parallel_for(batch, settings.threads, [&](std::size_t i) {
    const TaskSample task = tasks.meta_train_task(static_cast<std::uint64_t>(iteration), i);
    TaskOutcome& out = outcomes[i];
    if (settings.ispl) {
      const std::uint64_t seed = derive_seed(settings.seed, {0x15B1ULL, static_cast<std::uint64_t>(iteration), i});
      out.record = ispl::ispl_inner_loop(phi, settings.network, task.train, meta.inner_steps,
                                         settings.inner_optimizer, *settings.ispl, iteration, seed);
      out.selected_fraction = static_cast<double>(out.record.selected_count) / static_cast<double>(task.train.size());
    } else {
      out.record = trajectory::run_inner_loop(phi, settings.network, task.train, meta.inner_steps,
                                              settings.inner_optimizer);
    }
    const ParamVector adapted = out.record.endpoint();
    out.test_loss = task.test.size() > 0 ? nn::loss(adapted, settings.network, task.test, kind)
                                         : out.record.step_losses.back();
  });

  StepResult result;
  result.metrics.iteration = iteration;
  const double beta = meta.beta_at(iteration);

  // Reductions run in ascending task order so the result does not depend on
  // the thread schedule.
  double loss_sum = 0.0;
  for (const auto& o : outcomes) loss_sum += o.test_loss;
  result.metrics.meta_train_loss = loss_sum / static_cast<double>(batch);
  if (!std::isfinite(result.metrics.meta_train_loss)) throw NumericError("non-finite meta-train loss");

  if (settings.ispl) {
    double frac = 0.0;
    for (const auto& o : outcomes) frac += o.selected_fraction;
    result.metrics.selected_fraction = frac / static_cast<double>(batch);
    result.metrics.gamma = ispl::gamma_at(iteration, *settings.ispl);
  }

  if (meta.algorithm == Algorithm::reptile) {
    ParamVector mean_endpoint = ParamVector::Zero(phi.size());
    for (const auto& o : outcomes) mean_endpoint += o.record.endpoint();
    mean_endpoint /= static_cast<double>(batch);
    result.phi = reptile_update(phi, mean_endpoint, beta);
  } else {
    std::vector<TaskDirection> dirs;
    dirs.reserve(batch);
    for (const auto& o : outcomes) {
      dirs.push_back(meta.algorithm == Algorithm::eigen_reptile
                         ? task_direction(o.record, meta.sign_order)
                         : baseline_direction(o.record, meta.algorithm));
    }
    double zeta_sum = 0.0;
    int live = 0;
    for (const auto& d : dirs) {
      if (d.degenerate) continue;
      zeta_sum += d.zeta;
      ++live;
    }
    if (live > 0) result.metrics.zeta_mean = zeta_sum / live;
    result.phi = eigen_reptile_meta_update(phi, dirs, beta);
  }
  if (!result.phi.allFinite()) throw NumericError("non-finite meta-parameters");
  return result;
}

TrainingArtifacts outer_loop(const OuterLoopSettings& settings, const TaskSource& tasks,
                             const ParamVector* init) {
  settings.meta.validate();
  settings.network.validate();
  if (settings.ispl) settings.ispl->validate();

  TrainingArtifacts art;
  ParamVector phi = init ? *init : nn::init_params(settings.network, derive_seed(settings.seed, {0x1417ULL}), settings.init_scheme);
  if (static_cast<std::size_t>(phi.size()) != settings.network.param_count())
    throw std::invalid_argument("outer_loop: initial parameters do not match the network");

  const std::int64_t total = settings.meta.outer_iterations;
  art.metrics.reserve(static_cast<std::size_t>(total));
  art.best_params = phi;
  for (std::int64_t t = 0; t < total; ++t) {
    StepResult step = outer_step(settings, tasks, phi, t);
    phi = std::move(step.phi);
    const bool eval_now = settings.evaluator && settings.eval_interval > 0 &&
                          ((t + 1) % settings.eval_interval == 0 || t + 1 == total);
    if (eval_now) {
      const EvalResult ev = settings.evaluator(phi);
      step.metrics.eval_metric = ev.metric;
      step.metrics.eval_ci95 = ev.ci95;
      const bool better = !art.best_metric || (settings.higher_is_better ? ev.metric > *art.best_metric
                                                                         : ev.metric < *art.best_metric);
      if (better) {
        art.best_metric = ev.metric;
        art.best_iteration = t;
        art.best_params = phi;
      }
      if (t + 1 == total) art.final_metric = ev.metric;
    }
    art.metrics.push_back(std::move(step.metrics));
  }
  art.final_params = std::move(phi);
  if (!art.best_metric) art.best_params = art.final_params;
  return art;
}

}  // namespace metalab::meta
