#pragma once

// Subcommand implementations shared by the executable and the tests.

#include "metalab/meta.hpp"
#include "metalab/run_config.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace metalab::cli {

enum ExitCode : int { kExitOk = 0, kExitVerifyFailed = 1, kExitUsage = 2, kExitNumeric = 3 };

/// Runs `body`, mapping ConfigError / std::invalid_argument to 2 and
/// NumericError / ConvergenceError / other failures to 3.
int guarded(const std::function<int()>& body, std::ostream& err);

/// %.17g, or NA for an empty value.
std::string format_value(std::optional<double> v);

std::string metrics_csv(const std::vector<meta::IterationMetrics>& rows);

enum class EvalSplit { validation, test };

struct EvalPlan {
  std::function<meta::EvalResult(const nn::ParamVector&)> evaluate;
  bool higher_is_better = false;
};

struct Problem {
  nn::NetworkSpec network;
  std::unique_ptr<meta::TaskSource> tasks;
};

/// Network and meta-training task stream for a config.
Problem make_problem(const RunConfig& cfg);

/// Fixed evaluation tasks for a split, drawn from a stream of the run seed
/// that does not depend on the algorithm.
EvalPlan make_eval_plan(const RunConfig& cfg, const nn::NetworkSpec& network, EvalSplit split);

struct TrainOutcome {
  nn::NetworkSpec network;
  meta::TrainingArtifacts artifacts;
  std::optional<meta::EvalResult> test_at_best;  // classification families
  double wall_seconds = 0.0;
};

TrainOutcome run_training(const RunConfig& cfg);

/// Writes metrics.csv and final_summary.json into `dir`.
void write_outputs(const RunConfig& cfg, const TrainOutcome& outcome, const std::filesystem::path& dir);

constexpr std::array<meta::Algorithm, 4> kCompareOrder{meta::Algorithm::eigen_reptile, meta::Algorithm::reptile,
                                                       meta::Algorithm::avg_gradient_dir,
                                                       meta::Algorithm::avg_weights_dir};

struct CompareOutcome {
  std::vector<std::int64_t> iterations;
  std::array<std::vector<double>, 4> series;  // kCompareOrder
};

/// Trains the four update directions on one shared config and task stream.
/// Series hold the evaluation metric at each evaluation iteration.
CompareOutcome run_compare_directions(const RunConfig& cfg);
std::string compare_csv(const CompareOutcome& c);

int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const std::filesystem::path& summary, const RunConfig& cfg, bool use_best, std::ostream& out);
int cmd_verify(const std::string& suite, std::uint64_t seed, std::ostream& out);
int cmd_compare_directions(const RunConfig& cfg, std::ostream& out);

}  // namespace metalab::cli
