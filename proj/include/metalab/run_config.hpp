#pragma once

// JSON run configuration. Every object rejects keys it does not know.

#include "metalab/ispl.hpp"
#include "metalab/meta.hpp"
#include "metalab/nn.hpp"
#include "metalab/tasks.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace metalab::cli {

enum class TaskFamily { sine, synthetic_cls, episode_dir };

TaskFamily parse_task_family(std::string_view name);
std::string_view to_string(TaskFamily f);

struct NetworkConfig {
  std::vector<int> hidden{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  nn::InitScheme init = nn::InitScheme::glorot_uniform;
};

struct InnerConfig {
  nn::OptimizerKind optimizer = nn::OptimizerKind::sgd;
  double learning_rate = 0.02;
  double adam_beta1 = 0.0;

  nn::OptimizerState make() const;
};

struct TaskConfig {
  int way = 5;                      // N
  std::optional<int> train_shots;   // K_train; classification default: train-shot rule
  int test_shots = 10;              // K_test
  int input_dim = 16;               // classification features
  int batch_size = 10;              // used by the train-shot rule
};

struct EvalConfig {
  int interval = 0;  // 0: evaluate only after the last iteration
  int task_count = 100;
  int adaptation_steps = 32;
  double learning_rate = 0.02;
  int train_shots = 10;
  int test_shots = 10;
  std::string episode_dir;  // episode-dir family: held-out episodes
};

struct RunConfig {
  TaskFamily task_family = TaskFamily::sine;
  std::string episode_dir;
  NetworkConfig network;
  meta::MetaConfig meta;
  InnerConfig inner;
  TaskConfig task;
  tasks::NoiseSpec noise;
  bool ispl_enabled = false;
  ispl::ISPLConfig ispl;
  EvalConfig eval;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output_dir = "run";

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  int resolved_train_shots() const;
  nn::NetworkSpec network_spec(int input_dim) const;
};

/// Throws ConfigError on malformed JSON, wrong types, out-of-range values and
/// unknown keys.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON form (every field, defaults filled in).
std::string to_json(const RunConfig& cfg);

}  // namespace metalab::cli
