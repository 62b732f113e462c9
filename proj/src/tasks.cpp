#include "metalab/tasks.hpp"

#include "metalab/errors.hpp"
#include "metalab/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace metalab::tasks {
namespace {

constexpr std::uint64_t kTrainStream = 0x7A11ULL;
constexpr std::uint64_t kNoiseStream = 0x0015EULL;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_line(std::string_view source, std::size_t line, const std::string& what) {
  throw ConfigError(std::string(source) + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

double RegressionTask::operator()(double x) const { return amplitude * std::sin(x + phase); }

RegressionTask gen_sine_task(Rng& rng) {
  std::uniform_real_distribution<double> amp(kSineMinAmplitude, kSineMaxAmplitude);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  RegressionTask t;
  t.amplitude = amp(rng);
  t.phase = phase(rng);
  return t;
}

nn::Batch sample_points(const RegressionTask& task, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_points: K must be >= 1");
  std::uniform_real_distribution<double> xs(-kSineInputLimit, kSineInputLimit);
  nn::Batch b;
  b.inputs.resize(k, 1);
  b.targets.resize(k, 1);
  for (int i = 0; i < k; ++i) {
    const double x = xs(rng);
    b.inputs(i, 0) = x;
    b.targets(i, 0) = task(x);
  }
  return b;
}

nn::Batch grid_batch(const RegressionTask& task) {
  nn::Batch b;
  b.inputs.resize(kSineGridPoints, 1);
  b.targets.resize(kSineGridPoints, 1);
  for (int i = 0; i < kSineGridPoints; ++i) {
    const double x = -kSineInputLimit + 2.0 * kSineInputLimit * i / (kSineGridPoints - 1);
    b.inputs(i, 0) = x;
    b.targets(i, 0) = task(x);
  }
  return b;
}

double eval_grid_loss(const ParamVector& params, const nn::NetworkSpec& spec, const RegressionTask& task) {
  if (spec.head != nn::OutputHead::regression_linear || spec.input_dim() != 1 || spec.output_dim() != 1)
    throw std::invalid_argument("eval_grid_loss needs a 1-in 1-out regression network");
  return nn::loss(params, spec, grid_batch(task), nn::LossKind::mse);
}

void ClassificationConfig::validate() const {
  if (way < 2) throw std::invalid_argument("classification: N must be >= 2");
  if (train_shots < 1 || test_shots < 1) throw std::invalid_argument("classification: shot counts must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("classification: input_dim must be >= 1");
  if (!(mean_radius > 0.0) || !(noise_std >= 0.0)) throw std::invalid_argument("classification: bad geometry");
}

Episode gen_classification_episode(const ClassificationConfig& cfg, Rng& rng) {
  return gen_classification_episode(cfg, rng, nullptr);
}

Episode gen_classification_episode(const ClassificationConfig& cfg, Rng& rng, nn::Matrix* means_out) {
  cfg.validate();
  std::normal_distribution<double> gauss(0.0, 1.0);
  nn::Matrix means(cfg.way, cfg.input_dim);
  for (int c = 0; c < cfg.way; ++c) {
    double norm = 0.0;
    do {
      for (int j = 0; j < cfg.input_dim; ++j) means(c, j) = gauss(rng);
      norm = means.row(c).norm();
    } while (norm == 0.0);
    means.row(c) *= cfg.mean_radius / norm;
  }

  auto draw = [&](int shots) {
    nn::Batch b;
    b.inputs.resize(cfg.way * shots, cfg.input_dim);
    b.labels.reserve(static_cast<std::size_t>(cfg.way * shots));
    for (int c = 0; c < cfg.way; ++c) {
      for (int s = 0; s < shots; ++s) {
        const int row = c * shots + s;
        for (int j = 0; j < cfg.input_dim; ++j) b.inputs(row, j) = means(c, j) + cfg.noise_std * gauss(rng);
        b.labels.push_back(c);
      }
    }
    return b;
  };

  Episode ep;
  ep.way = cfg.way;
  ep.train_shots = cfg.train_shots;
  ep.test_shots = cfg.test_shots;
  ep.train = draw(cfg.train_shots);
  ep.test = draw(cfg.test_shots);
  if (means_out) *means_out = std::move(means);
  return ep;
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "none") return NoiseKind::none;
  if (name == "symmetric") return NoiseKind::symmetric;
  if (name == "asymmetric") return NoiseKind::asymmetric;
  throw std::invalid_argument("unknown noise kind '" + std::string(name) + "'");
}

std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::symmetric: return "symmetric";
    case NoiseKind::asymmetric: return "asymmetric";
  }
  return "?";
}

void NoiseSpec::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("noise: p must lie in [0, 1]");
}

std::vector<int> asymmetric_pairing(int way, std::uint64_t pairing_seed) {
  if (way < 2) throw std::invalid_argument("asymmetric_pairing: N must be >= 2");
  std::vector<int> order(static_cast<std::size_t>(way));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(pairing_seed, {0xA5ULL});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> pi(static_cast<std::size_t>(way));
  for (int k = 0; k < way; ++k)
    pi[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = order[static_cast<std::size_t>((k + 1) % way)];
  return pi;
}

Episode inject_label_noise(Episode ep, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind == NoiseKind::none || spec.p == 0.0) return ep;
  const int way = ep.way;
  if (way < 2) throw std::invalid_argument("inject_label_noise: N must be >= 2");
  std::vector<int> pairing;
  if (spec.kind == NoiseKind::asymmetric) pairing = asymmetric_pairing(way, spec.pairing_seed);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, way - 2);
  for (std::size_t i = 0; i < ep.train.labels.size(); ++i) {
    const int original = ep.train.labels[i];
    if (!(coin(rng) < spec.p)) continue;
    int flipped;
    if (spec.kind == NoiseKind::symmetric) {
      const int r = other(rng);
      flipped = r < original ? r : r + 1;
    } else {
      flipped = pairing[static_cast<std::size_t>(original)];
    }
    ep.train.labels[i] = flipped;
    ep.noise_record.push_back({static_cast<int>(i), original, flipped});
  }
  return ep;
}

int compute_train_shot(int inner_steps, int batch_size, int way) {
  if (inner_steps < 1 || batch_size < 1 || way < 1)
    throw std::invalid_argument("compute_train_shot: inputs must be positive");
  const long long num = static_cast<long long>(inner_steps) * batch_size;
  return static_cast<int>((num + way - 1) / way) + 1;
}

std::vector<int> predict(const ParamVector& params, const nn::NetworkSpec& spec, const nn::Matrix& inputs) {
  const nn::Matrix out = nn::forward(params, spec, inputs);
  std::vector<int> labels(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index best = 0;
    out.row(i).maxCoeff(&best);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return labels;
}

double accuracy(const ParamVector& params, const nn::NetworkSpec& spec, const nn::Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("accuracy: empty batch");
  const auto pred = predict(params, spec, batch.inputs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

LabeledRows parse_episode_csv(std::string_view text, std::string_view source_name) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::vector<int> labels;
  std::vector<double> values;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (!header_seen) {
      if (fields.size() < 2 || fields[0] != "label") bad_line(source_name, line_no, "expected header label,f1,...,fD");
      for (std::size_t j = 1; j < fields.size(); ++j)
        if (fields[j] != "f" + std::to_string(j)) bad_line(source_name, line_no, "header column " + std::to_string(j + 1) + " should be f" + std::to_string(j));
      dim = fields.size() - 1;
      header_seen = true;
      continue;
    }
    if (fields.size() != dim + 1)
      bad_line(source_name, line_no, "expected " + std::to_string(dim + 1) + " fields, got " + std::to_string(fields.size()));
    int label = 0;
    const auto& lf = fields[0];
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lec != std::errc{} || lp != lf.data() + lf.size() || label < 0)
      bad_line(source_name, line_no, "bad label '" + lf + "'");
    labels.push_back(label);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      const auto& f = fields[j];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || p != f.data() + f.size() || !std::isfinite(v))
        bad_line(source_name, line_no, "bad number '" + f + "' in column " + std::to_string(j + 1));
      values.push_back(v);
    }
  }
  if (!header_seen) throw ConfigError(std::string(source_name) + ": empty episode file");
  if (labels.empty()) throw ConfigError(std::string(source_name) + ": no data rows");

  LabeledRows rows;
  rows.labels = std::move(labels);
  rows.features.resize(static_cast<Eigen::Index>(rows.labels.size()), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < rows.features.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.features.cols(); ++j)
      rows.features(i, j) = values[static_cast<std::size_t>(i) * dim + static_cast<std::size_t>(j)];
  return rows;
}

LabeledRows load_episode_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open episode file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_episode_csv(buf.str(), path.string());
}

Episode episode_from_rows(const LabeledRows& rows, int way, int train_shots, int test_shots) {
  if (way < 2 || train_shots < 1 || test_shots < 1) throw std::invalid_argument("episode_from_rows: bad shape");
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(way));
  for (std::size_t i = 0; i < rows.labels.size(); ++i) {
    const int c = rows.labels[i];
    if (c >= way) throw ConfigError("episode label " + std::to_string(c) + " outside [0, " + std::to_string(way) + ")");
    by_class[static_cast<std::size_t>(c)].push_back(static_cast<Eigen::Index>(i));
  }
  const Eigen::Index dim = rows.features.cols();
  Episode ep;
  ep.way = way;
  ep.train_shots = train_shots;
  ep.test_shots = test_shots;
  ep.train.inputs.resize(way * train_shots, dim);
  ep.test.inputs.resize(way * test_shots, dim);
  for (int c = 0; c < way; ++c) {
    const auto& idx = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(idx.size()) < train_shots + test_shots)
      throw ConfigError("episode class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " rows, needs " + std::to_string(train_shots + test_shots));
    for (int s = 0; s < train_shots; ++s) {
      ep.train.inputs.row(c * train_shots + s) = rows.features.row(idx[static_cast<std::size_t>(s)]);
      ep.train.labels.push_back(c);
    }
    for (int s = 0; s < test_shots; ++s) {
      ep.test.inputs.row(c * test_shots + s) = rows.features.row(idx[static_cast<std::size_t>(train_shots + s)]);
      ep.test.labels.push_back(c);
    }
  }
  return ep;
}

SineTaskSource::SineTaskSource(std::uint64_t seed, int train_shots, int test_shots)
    : seed_(seed), train_shots_(train_shots), test_shots_(test_shots) {
  if (train_shots < 1 || test_shots < 1) throw std::invalid_argument("SineTaskSource: shots must be >= 1");
}

meta::TaskSample SineTaskSource::meta_train_task(std::uint64_t iteration, std::uint64_t index) const {
  Rng rng = make_rng(seed_, {kTrainStream, iteration, index});
  const RegressionTask task = gen_sine_task(rng);
  meta::TaskSample s;
  s.train = sample_points(task, train_shots_, rng);
  s.test = sample_points(task, test_shots_, rng);
  return s;
}

ClassificationTaskSource::ClassificationTaskSource(std::uint64_t seed, ClassificationConfig cfg, NoiseSpec noise)
    : seed_(seed), cfg_(cfg), noise_(noise) {
  cfg_.validate();
  noise_.validate();
}

meta::TaskSample ClassificationTaskSource::meta_train_task(std::uint64_t iteration, std::uint64_t index) const {
  Rng rng = make_rng(seed_, {kTrainStream, iteration, index});
  Episode ep = gen_classification_episode(cfg_, rng);
  Rng noise_rng = make_rng(seed_, {kNoiseStream, iteration, index});
  ep = inject_label_noise(std::move(ep), noise_, noise_rng);
  return {std::move(ep.train), std::move(ep.test)};
}

EpisodeDirTaskSource::EpisodeDirTaskSource(const std::filesystem::path& dir, std::uint64_t seed, int way,
                                           int train_shots, int test_shots, NoiseSpec noise)
    : seed_(seed), noise_(noise) {
  noise_.validate();
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw ConfigError("episode directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .csv episode files in " + dir.string());
  for (const auto& f : files) episodes_.push_back(episode_from_rows(load_episode_file(f), way, train_shots, test_shots));
  const Eigen::Index dim = episodes_.front().train.inputs.cols();
  for (const auto& ep : episodes_)
    if (ep.train.inputs.cols() != dim) throw ConfigError("episode files disagree on the feature count");
}

meta::TaskSample EpisodeDirTaskSource::meta_train_task(std::uint64_t iteration, std::uint64_t index) const {
  Rng rng = make_rng(seed_, {kTrainStream, iteration, index});
  std::uniform_int_distribution<std::size_t> pick(0, episodes_.size() - 1);
  Episode ep = episodes_[pick(rng)];
  Rng noise_rng = make_rng(seed_, {kNoiseStream, iteration, index});
  ep = inject_label_noise(std::move(ep), noise_, noise_rng);
  return {std::move(ep.train), std::move(ep.test)};
}

meta::EvalResult summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  meta::EvalResult r;
  r.metric = mean;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

SineEvalSet make_sine_eval_set(int count, int shots, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_sine_eval_set: need at least one task");
  SineEvalSet set;
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    set.tasks.push_back(gen_sine_task(rng));
    set.support.push_back(sample_points(set.tasks.back(), shots, rng));
  }
  return set;
}

meta::EvalResult evaluate_sine(const ParamVector& params, const nn::NetworkSpec& spec, const SineEvalSet& set,
                               int steps, const nn::OptimizerState& opt) {
  std::vector<double> losses;
  losses.reserve(set.tasks.size());
  for (std::size_t i = 0; i < set.tasks.size(); ++i) {
    const ParamVector adapted = trajectory::adapt(params, spec, set.support[i], steps, opt);
    losses.push_back(eval_grid_loss(adapted, spec, set.tasks[i]));
  }
  return summarize(losses);
}

std::vector<Episode> make_classification_eval_set(int count, const ClassificationConfig& cfg, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_classification_eval_set: need at least one task");
  std::vector<Episode> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    out.push_back(gen_classification_episode(cfg, rng));
  }
  return out;
}

meta::EvalResult evaluate_classification(const ParamVector& params, const nn::NetworkSpec& spec,
                                         std::span<const Episode> episodes, int steps,
                                         const nn::OptimizerState& opt) {
  std::vector<double> accs;
  accs.reserve(episodes.size());
  for (const auto& ep : episodes) {
    const ParamVector adapted = trajectory::adapt(params, spec, ep.train, steps, opt);
    accs.push_back(accuracy(adapted, spec, ep.test));
  }
  return summarize(accs);
}

}  // namespace metalab::tasks
