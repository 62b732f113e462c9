#include "metalab/commands.hpp"

#include "metalab/errors.hpp"
#include "metalab/rng.hpp"
#include "metalab/tasks.hpp"
#include "metalab/verify.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace metalab::cli {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTaskStream = 1;
constexpr std::uint64_t kValidationStream = 2;
constexpr std::uint64_t kTestStream = 3;

tasks::ClassificationConfig classification_config(const RunConfig& cfg, int train_shots, int test_shots) {
  tasks::ClassificationConfig c;
  c.way = cfg.task.way;
  c.train_shots = train_shots;
  c.test_shots = test_shots;
  c.input_dim = cfg.task.input_dim;
  return c;
}

nn::OptimizerState eval_optimizer(const RunConfig& cfg) {
  InnerConfig e = cfg.inner;
  e.learning_rate = cfg.eval.learning_rate;
  return e.make();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed for " + path.string());
}

json params_json(const nn::ParamVector& p) { return json(std::vector<double>(p.data(), p.data() + p.size())); }

json optional_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

}  // namespace

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitNumeric;
  }
}

std::string format_value(std::optional<double> v) {
  if (!v) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string metrics_csv(const std::vector<meta::IterationMetrics>& rows) {
  std::string out = "iteration,meta_train_loss,eval_metric,eval_ci95,gamma,selected_fraction,zeta_mean\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + format_value(r.meta_train_loss) + "," + format_value(r.eval_metric) +
           "," + format_value(r.eval_ci95) + "," + format_value(r.gamma) + "," + format_value(r.selected_fraction) +
           "," + format_value(r.zeta_mean) + "\n";
  }
  return out;
}

Problem make_problem(const RunConfig& cfg) {
  cfg.validate();
  const std::uint64_t task_seed = derive_seed(cfg.seed, {kTaskStream});
  Problem p;
  switch (cfg.task_family) {
    case TaskFamily::sine:
      p.network = cfg.network_spec(1);
      p.tasks = std::make_unique<tasks::SineTaskSource>(task_seed, cfg.resolved_train_shots(), cfg.task.test_shots);
      break;
    case TaskFamily::synthetic_cls:
      p.network = cfg.network_spec(cfg.task.input_dim);
      p.tasks = std::make_unique<tasks::ClassificationTaskSource>(
          task_seed, classification_config(cfg, cfg.resolved_train_shots(), cfg.task.test_shots), cfg.noise);
      break;
    case TaskFamily::episode_dir: {
      auto src = std::make_unique<tasks::EpisodeDirTaskSource>(cfg.episode_dir, task_seed, cfg.task.way,
                                                               cfg.resolved_train_shots(), cfg.task.test_shots, cfg.noise);
      p.network = cfg.network_spec(static_cast<int>(src->episodes().front().train.inputs.cols()));
      p.tasks = std::move(src);
      break;
    }
  }
  return p;
}

EvalPlan make_eval_plan(const RunConfig& cfg, const nn::NetworkSpec& network, EvalSplit split) {
  const std::uint64_t seed = derive_seed(cfg.seed, {split == EvalSplit::validation ? kValidationStream : kTestStream});
  const int steps = cfg.eval.adaptation_steps;
  const nn::OptimizerState opt = eval_optimizer(cfg);
  EvalPlan plan;
  switch (cfg.task_family) {
    case TaskFamily::sine: {
      auto set = std::make_shared<tasks::SineEvalSet>(tasks::make_sine_eval_set(cfg.eval.task_count, cfg.eval.train_shots, seed));
      plan.evaluate = [set, network, steps, opt](const nn::ParamVector& p) {
        return tasks::evaluate_sine(p, network, *set, steps, opt);
      };
      plan.higher_is_better = false;
      break;
    }
    case TaskFamily::synthetic_cls: {
      auto eps = std::make_shared<std::vector<tasks::Episode>>(tasks::make_classification_eval_set(
          cfg.eval.task_count, classification_config(cfg, cfg.eval.train_shots, cfg.eval.test_shots), seed));
      plan.evaluate = [eps, network, steps, opt](const nn::ParamVector& p) {
        return tasks::evaluate_classification(p, network, *eps, steps, opt);
      };
      plan.higher_is_better = true;
      break;
    }
    case TaskFamily::episode_dir: {
      const std::string dir = cfg.eval.episode_dir.empty() ? cfg.episode_dir : cfg.eval.episode_dir;
      const tasks::EpisodeDirTaskSource source(dir, seed, cfg.task.way, cfg.eval.train_shots, cfg.eval.test_shots,
                                               tasks::NoiseSpec{});
      // Validation and test each take a seeded draw of task_count episodes.
      auto eps = std::make_shared<std::vector<tasks::Episode>>();
      for (int i = 0; i < cfg.eval.task_count; ++i) {
        const meta::TaskSample s = source.meta_train_task(0, static_cast<std::uint64_t>(i));
        tasks::Episode ep;
        ep.way = cfg.task.way;
        ep.train = s.train;
        ep.test = s.test;
        eps->push_back(std::move(ep));
      }
      plan.evaluate = [eps, network, steps, opt](const nn::ParamVector& p) {
        return tasks::evaluate_classification(p, network, *eps, steps, opt);
      };
      plan.higher_is_better = true;
      break;
    }
  }
  return plan;
}

TrainOutcome run_training(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  Problem problem = make_problem(cfg);
  const EvalPlan validation = make_eval_plan(cfg, problem.network, EvalSplit::validation);

  meta::OuterLoopSettings s;
  s.meta = cfg.meta;
  s.network = problem.network;
  s.init_scheme = cfg.network.init;
  s.inner_optimizer = cfg.inner.make();
  if (cfg.ispl_enabled) s.ispl = cfg.ispl;
  s.seed = cfg.seed;
  s.threads = cfg.threads;
  s.eval_interval = cfg.eval.interval > 0 ? cfg.eval.interval : cfg.meta.outer_iterations;
  s.evaluator = validation.evaluate;
  s.higher_is_better = validation.higher_is_better;

  TrainOutcome out;
  out.network = problem.network;
  out.artifacts = meta::outer_loop(s, *problem.tasks);
  if (cfg.task_family != TaskFamily::sine) {
    const EvalPlan test = make_eval_plan(cfg, problem.network, EvalSplit::test);
    out.test_at_best = test.evaluate(out.artifacts.best_params);
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void write_outputs(const RunConfig& cfg, const TrainOutcome& outcome, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_file(dir / "metrics.csv", metrics_csv(outcome.artifacts.metrics));

  const auto& art = outcome.artifacts;
  json summary;
  summary["best_iteration"] = art.best_metric ? json(art.best_iteration) : json(nullptr);
  summary["best_metric"] = optional_json(art.best_metric);
  summary["final_metric"] = optional_json(art.final_metric);
  summary["config_echo"] = json::parse(to_json(cfg));
  summary["wall_seconds"] = outcome.wall_seconds;
  if (outcome.test_at_best) {
    summary["test_metric_at_best"] = outcome.test_at_best->metric;
    summary["test_ci95_at_best"] = outcome.test_at_best->ci95;
  }
  summary["param_count"] = outcome.network.param_count();
  summary["final_params"] = params_json(art.final_params);
  summary["best_params"] = params_json(art.best_params);
  write_file(dir / "final_summary.json", summary.dump(2) + "\n");
}

CompareOutcome run_compare_directions(const RunConfig& cfg) {
  if (cfg.task_family != TaskFamily::sine) throw ConfigError("compare-directions needs the sine task family");
  CompareOutcome c;
  for (std::size_t k = 0; k < kCompareOrder.size(); ++k) {
    RunConfig run = cfg;
    run.meta.algorithm = kCompareOrder[k];
    const TrainOutcome o = run_training(run);
    std::vector<std::int64_t> its;
    for (const auto& m : o.artifacts.metrics) {
      if (!m.eval_metric) continue;
      its.push_back(m.iteration);
      c.series[k].push_back(*m.eval_metric);
    }
    if (k == 0) c.iterations = std::move(its);
  }
  return c;
}

std::string compare_csv(const CompareOutcome& c) {
  std::string out = "iteration";
  for (auto a : kCompareOrder) {
    std::string name(meta::to_string(a));
    for (auto& ch : name)
      if (ch == '-') ch = '_';
    out += "," + name;
  }
  out += "\n";
  for (std::size_t i = 0; i < c.iterations.size(); ++i) {
    out += std::to_string(c.iterations[i]);
    for (const auto& s : c.series) out += "," + format_value(s[i]);
    out += "\n";
  }
  return out;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const TrainOutcome o = run_training(cfg);
  write_outputs(cfg, o, cfg.output_dir);
  out << "trained " << meta::to_string(cfg.meta.algorithm) << " for " << cfg.meta.outer_iterations
      << " iterations; final metric " << format_value(o.artifacts.final_metric) << ", best "
      << format_value(o.artifacts.best_metric) << " at iteration " << o.artifacts.best_iteration << "\n";
  if (o.test_at_best) out << "test metric at best checkpoint " << format_value(o.test_at_best->metric) << "\n";
  out << "wrote " << (std::filesystem::path(cfg.output_dir) / "metrics.csv").string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::filesystem::path& summary_path, const RunConfig& cfg, bool use_best, std::ostream& out) {
  std::ifstream in(summary_path);
  if (!in) throw ConfigError("cannot read summary " + summary_path.string());
  json summary;
  try {
    in >> summary;
  } catch (const json::exception& e) {
    throw ConfigError("malformed summary " + summary_path.string() + ": " + e.what());
  }
  const char* key = use_best ? "best_params" : "final_params";
  if (!summary.contains(key) || !summary[key].is_array()) throw ConfigError(std::string("summary has no ") + key);
  std::vector<double> values;
  try {
    values = summary[key].get<std::vector<double>>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("summary ") + key + " is not a number array");
  }
  const Problem problem = make_problem(cfg);
  if (values.size() != problem.network.param_count())
    throw ConfigError("summary holds " + std::to_string(values.size()) + " parameters, the network needs " +
                      std::to_string(problem.network.param_count()));
  const nn::ParamVector params = Eigen::Map<const nn::ParamVector>(values.data(), static_cast<Eigen::Index>(values.size()));
  const meta::EvalResult r = make_eval_plan(cfg, problem.network, EvalSplit::test).evaluate(params);
  out << "tasks " << cfg.eval.task_count << "\nmetric " << format_value(r.metric) << "\nci95 " << format_value(r.ci95)
      << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, std::ostream& out) {
  const auto results = verify::run_suites(suite, seed);
  bool all = true;
  for (const auto& r : results) {
    out << std::left << std::setw(18) << r.name << (r.passed ? "PASS  " : "FAIL  ") << std::fixed
        << std::setprecision(3) << r.seconds << "s  " << r.detail << "\n";
    all = all && r.passed;
  }
  out << (all ? "all suites passed" : "verification failed") << "\n";
  return all ? kExitOk : kExitVerifyFailed;
}

int cmd_compare_directions(const RunConfig& cfg, std::ostream& out) {
  const CompareOutcome c = run_compare_directions(cfg);
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + cfg.output_dir);
  const auto path = std::filesystem::path(cfg.output_dir) / "compare_directions.csv";
  write_file(path, compare_csv(c));
  out << "final grid loss:";
  for (std::size_t k = 0; k < kCompareOrder.size(); ++k)
    out << " " << meta::to_string(kCompareOrder[k]) << "=" << format_value(c.series[k].back());
  out << "\nwrote " << path.string() << "\n";
  return kExitOk;
}

}  // namespace metalab::cli
