#pragma once

// Episode generators: sine-wave regression, Gaussian-cluster N-way K-shot
// classification, label-noise injection, and a loader for episode files.

#include "metalab/meta.hpp"
#include "metalab/nn.hpp"
#include "metalab/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace metalab::tasks {

using nn::ParamVector;

// --- Sine regression -------------------------------------------------------

constexpr double kSineMinAmplitude = 0.1;
constexpr double kSineMaxAmplitude = 5.0;
constexpr double kSineInputLimit = 5.0;
constexpr int kSineGridPoints = 50;

struct RegressionTask {
  double amplitude = 1.0;
  double phase = 0.0;

  double operator()(double x) const;
};

RegressionTask gen_sine_task(Rng& rng);

/// K inputs uniform in [-5, 5] with targets A sin(x + b).
nn::Batch sample_points(const RegressionTask& task, int k, Rng& rng);

/// The 50 equally spaced inputs in [-5, 5] (both ends included) with targets.
nn::Batch grid_batch(const RegressionTask& task);

/// Mean squared error over the evaluation grid.
double eval_grid_loss(const ParamVector& params, const nn::NetworkSpec& spec, const RegressionTask& task);

// --- Classification --------------------------------------------------------

struct ClassificationConfig {
  int way = 5;
  int train_shots = 1;
  int test_shots = 1;
  int input_dim = 16;
  double mean_radius = 3.0;
  double noise_std = 1.0;

  void validate() const;
};

struct NoiseRecordEntry {
  int index = 0;  // row in the train split
  int original = 0;
  int flipped = 0;
};

struct Episode {
  nn::Batch train;
  nn::Batch test;
  int way = 0;
  int train_shots = 0;
  int test_shots = 0;
  std::vector<NoiseRecordEntry> noise_record;
};

/// Class means uniform on the sphere of radius cfg.mean_radius, samples
/// mean + isotropic Gaussian noise. Rows are grouped by class.
Episode gen_classification_episode(const ClassificationConfig& cfg, Rng& rng);

/// Also returns the class means, for oracle classifiers.
Episode gen_classification_episode(const ClassificationConfig& cfg, Rng& rng, nn::Matrix* means_out);

enum class NoiseKind { none, symmetric, asymmetric };

NoiseKind parse_noise_kind(std::string_view name);
std::string_view to_string(NoiseKind k);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double p = 0.0;
  std::uint64_t pairing_seed = 0;

  void validate() const;
};

/// Fixed class pairing c -> pi(c) without fixed points, a function of the
/// seed only: a seeded permutation s and pi(s[k]) = s[(k + 1) mod N].
std::vector<int> asymmetric_pairing(int way, std::uint64_t pairing_seed);

/// Flips train labels only. Symmetric: keep w.p. 1 - p, otherwise uniform
/// over the other N - 1 classes. Asymmetric: flip to the paired class w.p. p.
Episode inject_label_noise(Episode ep, const NoiseSpec& spec, Rng& rng);

/// ceil(inner_steps * batch_size / way) + 1.
int compute_train_shot(int inner_steps, int batch_size, int way);

/// Predicted class per row (argmax of the network output).
std::vector<int> predict(const ParamVector& params, const nn::NetworkSpec& spec, const nn::Matrix& inputs);
double accuracy(const ParamVector& params, const nn::NetworkSpec& spec, const nn::Batch& batch);

// --- Episode files ---------------------------------------------------------

struct LabeledRows {
  std::vector<int> labels;
  nn::Matrix features;  // rows x D
};

/// Parses "label,f1,...,fD" with that header row. Throws ConfigError naming
/// the offending line.
LabeledRows parse_episode_csv(std::string_view text, std::string_view source_name = "<text>");
LabeledRows load_episode_file(const std::filesystem::path& path);

/// Per class, the first train_shots rows go to train and the next
/// test_shots rows to test. Labels must be 0..way-1.
Episode episode_from_rows(const LabeledRows& rows, int way, int train_shots, int test_shots);

// --- Task streams and evaluation -------------------------------------------

class SineTaskSource final : public meta::TaskSource {
 public:
  SineTaskSource(std::uint64_t seed, int train_shots, int test_shots);
  meta::TaskSample meta_train_task(std::uint64_t iteration, std::uint64_t index) const override;

 private:
  std::uint64_t seed_;
  int train_shots_;
  int test_shots_;
};

class ClassificationTaskSource final : public meta::TaskSource {
 public:
  ClassificationTaskSource(std::uint64_t seed, ClassificationConfig cfg, NoiseSpec noise);
  meta::TaskSample meta_train_task(std::uint64_t iteration, std::uint64_t index) const override;

 private:
  std::uint64_t seed_;
  ClassificationConfig cfg_;
  NoiseSpec noise_;
};

class EpisodeDirTaskSource final : public meta::TaskSource {
 public:
  /// Loads every *.csv file of `dir` in lexicographic order.
  EpisodeDirTaskSource(const std::filesystem::path& dir, std::uint64_t seed, int way, int train_shots,
                       int test_shots, NoiseSpec noise);
  meta::TaskSample meta_train_task(std::uint64_t iteration, std::uint64_t index) const override;
  std::size_t episode_count() const { return episodes_.size(); }
  const std::vector<Episode>& episodes() const { return episodes_; }

 private:
  std::uint64_t seed_;
  NoiseSpec noise_;
  std::vector<Episode> episodes_;
};

/// Mean and 1.96 * sample std / sqrt(count).
meta::EvalResult summarize(std::span<const double> values);

struct SineEvalSet {
  std::vector<RegressionTask> tasks;
  std::vector<nn::Batch> support;
};

SineEvalSet make_sine_eval_set(int count, int shots, std::uint64_t seed);

/// Adapts on each support set, then reports the grid loss.
meta::EvalResult evaluate_sine(const ParamVector& params, const nn::NetworkSpec& spec, const SineEvalSet& set,
                               int steps, const nn::OptimizerState& opt);

std::vector<Episode> make_classification_eval_set(int count, const ClassificationConfig& cfg, std::uint64_t seed);

/// Adapts on each train split, then reports accuracy on the test split.
meta::EvalResult evaluate_classification(const ParamVector& params, const nn::NetworkSpec& spec,
                                         std::span<const Episode> episodes, int steps,
                                         const nn::OptimizerState& opt);

}  // namespace metalab::tasks
