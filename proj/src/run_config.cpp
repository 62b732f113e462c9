#include "metalab/run_config.hpp"

#include "metalab/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace metalab::cli {
namespace {

using nlohmann::json;

// Reads fields of one JSON object and reports any key that was not read.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  void get_int(const char* key, int& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    const auto v = it->get<std::int64_t>();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      throw ConfigError(where(key) + " is out of range");
    out = static_cast<int>(v);
  }

  void get_double(const char* key, double& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_number()) throw ConfigError(where(key) + " must be a number");
    out = it->get<double>();
  }

  template <class Parse, class T>
  void get_enum(const char* key, T& out, Parse parse) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_string()) throw ConfigError(where(key) + " must be a string");
    try {
      out = parse(it->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    return key ? p + "." + key : p;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where(it.key().c_str()));
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string_view optimizer_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::sgd ? "sgd" : "adam"; }

nn::OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return nn::OptimizerKind::sgd;
  if (name == "adam") return nn::OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

std::string_view beta_schedule_name(meta::BetaSchedule s) {
  return s == meta::BetaSchedule::constant ? "constant" : "linear-decay";
}

std::string_view sign_order_name(meta::SignOrder s) {
  return s == meta::SignOrder::flip_then_project ? "flip-then-project" : "project-then-flip";
}

}  // namespace

TaskFamily parse_task_family(std::string_view name) {
  if (name == "sine") return TaskFamily::sine;
  if (name == "synthetic-cls") return TaskFamily::synthetic_cls;
  if (name == "episode-dir") return TaskFamily::episode_dir;
  throw std::invalid_argument("unknown task family '" + std::string(name) + "'");
}

std::string_view to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::sine: return "sine";
    case TaskFamily::synthetic_cls: return "synthetic-cls";
    case TaskFamily::episode_dir: return "episode-dir";
  }
  return "?";
}

nn::OptimizerState InnerConfig::make() const {
  return optimizer == nn::OptimizerKind::sgd ? nn::OptimizerState::sgd(learning_rate)
                                             : nn::OptimizerState::adam(learning_rate, adam_beta1);
}

int RunConfig::resolved_train_shots() const {
  if (task.train_shots) return *task.train_shots;
  if (task_family == TaskFamily::sine) return 10;
  return tasks::compute_train_shot(meta.inner_steps, task.batch_size, task.way);
}

nn::NetworkSpec RunConfig::network_spec(int input_dim) const {
  if (task_family == TaskFamily::sine)
    return nn::NetworkSpec::mlp(1, network.hidden, 1, network.activation, nn::OutputHead::regression_linear);
  return nn::NetworkSpec::mlp(input_dim, network.hidden, task.way, network.activation,
                              nn::OutputHead::classification_softmax);
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  try {
    meta.validate();
    noise.validate();
    if (ispl_enabled) ispl.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  check(!network.hidden.empty(), "network.hidden must list at least one layer");
  for (int h : network.hidden) check(h >= 1, "network.hidden sizes must be >= 1");
  check(inner.learning_rate > 0.0, "inner.learning_rate must be positive");
  check(inner.adam_beta1 >= 0.0 && inner.adam_beta1 < 1.0, "inner.adam_beta1 must lie in [0, 1)");
  check(!task.train_shots || *task.train_shots >= 1, "task.K_train must be >= 1");
  check(task.test_shots >= 1, "task.K_test must be >= 1");
  check(task.batch_size >= 1, "task.batch_size must be >= 1");
  check(eval.interval >= 0, "eval.interval must be >= 0");
  check(eval.task_count >= 1, "eval.task_count must be >= 1");
  check(eval.adaptation_steps >= 0, "eval.adaptation_steps must be >= 0");
  check(eval.learning_rate > 0.0, "eval.learning_rate must be positive");
  check(eval.train_shots >= 1 && eval.test_shots >= 1, "eval shot counts must be >= 1");
  check(threads >= 1, "threads must be >= 1");
  check(!output_dir.empty(), "output_dir must not be empty");
  if (task_family != TaskFamily::sine) {
    check(task.way >= 2, "task.N must be >= 2");
    check(task.input_dim >= 1, "task.input_dim must be >= 1");
  } else {
    check(noise.kind == tasks::NoiseKind::none, "label noise applies to classification families only");
  }
  if (task_family == TaskFamily::episode_dir) check(!episode_dir.empty(), "episode_dir is required for episode-dir");
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  ObjectReader r(root, "");
  r.get_enum("task_family", cfg.task_family, parse_task_family);
  r.get("episode_dir", cfg.episode_dir);
  r.get("output_dir", cfg.output_dir);
  r.get_int("threads", cfg.threads);
  if (const json* s = r.child("seed")) {
    if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<std::int64_t>() >= 0))
      throw ConfigError("config.seed must be a nonnegative integer");
    cfg.seed = s->get<std::uint64_t>();
  }

  if (const json* n = r.child("network")) {
    ObjectReader o(*n, "network");
    o.get("hidden", cfg.network.hidden);
    o.get_enum("activation", cfg.network.activation, nn::parse_activation);
    o.get_enum("init", cfg.network.init, nn::parse_init_scheme);
    o.finish();
  }
  if (const json* m = r.child("meta")) {
    ObjectReader o(*m, "meta");
    o.get_enum("algorithm", cfg.meta.algorithm, meta::parse_algorithm);
    o.get_double("beta", cfg.meta.beta);
    o.get_int("meta_batch", cfg.meta.meta_batch);
    o.get_int("inner_steps", cfg.meta.inner_steps);
    o.get_int("outer_iterations", cfg.meta.outer_iterations);
    o.get_enum("beta_schedule", cfg.meta.beta_schedule, meta::parse_beta_schedule);
    o.get_enum("sign_order", cfg.meta.sign_order, meta::parse_sign_order);
    o.finish();
  }
  if (const json* i = r.child("inner")) {
    ObjectReader o(*i, "inner");
    o.get_enum("optimizer", cfg.inner.optimizer, parse_optimizer);
    o.get_double("learning_rate", cfg.inner.learning_rate);
    o.get_double("adam_beta1", cfg.inner.adam_beta1);
    o.finish();
  }
  if (const json* t = r.child("task")) {
    ObjectReader o(*t, "task");
    o.get_int("N", cfg.task.way);
    if (const json* k = o.child("K_train")) {
      if (!k->is_number_integer()) throw ConfigError("task.K_train must be an integer");
      cfg.task.train_shots = k->get<int>();
    }
    o.get_int("K_test", cfg.task.test_shots);
    o.get_int("input_dim", cfg.task.input_dim);
    o.get_int("batch_size", cfg.task.batch_size);
    o.finish();
  }
  if (const json* n = r.child("noise")) {
    ObjectReader o(*n, "noise");
    o.get_enum("kind", cfg.noise.kind, tasks::parse_noise_kind);
    o.get_double("p", cfg.noise.p);
    o.get("pairing_seed", cfg.noise.pairing_seed);
    o.finish();
  }
  if (const json* s = r.child("ispl")) {
    ObjectReader o(*s, "ispl");
    o.get("enabled", cfg.ispl_enabled);
    o.get_int("Q", cfg.ispl.prior_count);
    o.get_double("gamma0", cfg.ispl.gamma0);
    o.get_double("mu", cfg.ispl.mu);
    o.get_int("period", cfg.ispl.period);
    o.get_double("prior_fraction", cfg.ispl.prior_fraction);
    if (const json* m = o.child("prior_steps")) {
      if (!m->is_null()) {
        if (!m->is_number_integer()) throw ConfigError("ispl.prior_steps must be an integer");
        cfg.ispl.prior_steps = m->get<int>();
      }
    }
    o.get("per_inner_step_decay", cfg.ispl.per_inner_step_decay);
    o.finish();
  }
  if (const json* e = r.child("eval")) {
    ObjectReader o(*e, "eval");
    o.get_int("interval", cfg.eval.interval);
    o.get_int("task_count", cfg.eval.task_count);
    o.get_int("adaptation_steps", cfg.eval.adaptation_steps);
    o.get_double("learning_rate", cfg.eval.learning_rate);
    o.get_int("train_shots", cfg.eval.train_shots);
    o.get_int("test_shots", cfg.eval.test_shots);
    o.get("episode_dir", cfg.eval.episode_dir);
    o.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string to_json(const RunConfig& cfg) {
  json j;
  j["task_family"] = std::string(to_string(cfg.task_family));
  j["episode_dir"] = cfg.episode_dir;
  j["network"] = {{"hidden", cfg.network.hidden},
                  {"activation", std::string(nn::to_string(cfg.network.activation))},
                  {"init", std::string(nn::to_string(cfg.network.init))}};
  j["meta"] = {{"algorithm", std::string(meta::to_string(cfg.meta.algorithm))},
               {"beta", cfg.meta.beta},
               {"meta_batch", cfg.meta.meta_batch},
               {"inner_steps", cfg.meta.inner_steps},
               {"outer_iterations", cfg.meta.outer_iterations},
               {"beta_schedule", std::string(beta_schedule_name(cfg.meta.beta_schedule))},
               {"sign_order", std::string(sign_order_name(cfg.meta.sign_order))}};
  j["inner"] = {{"optimizer", std::string(optimizer_name(cfg.inner.optimizer))},
                {"learning_rate", cfg.inner.learning_rate},
                {"adam_beta1", cfg.inner.adam_beta1}};
  j["task"] = {{"N", cfg.task.way},
               {"K_train", cfg.resolved_train_shots()},
               {"K_test", cfg.task.test_shots},
               {"input_dim", cfg.task.input_dim},
               {"batch_size", cfg.task.batch_size}};
  j["noise"] = {{"kind", std::string(tasks::to_string(cfg.noise.kind))},
                {"p", cfg.noise.p},
                {"pairing_seed", cfg.noise.pairing_seed}};
  j["ispl"] = {{"enabled", cfg.ispl_enabled},
               {"Q", cfg.ispl.prior_count},
               {"gamma0", cfg.ispl.gamma0},
               {"mu", cfg.ispl.mu},
               {"period", cfg.ispl.period},
               {"prior_fraction", cfg.ispl.prior_fraction},
               {"prior_steps", cfg.ispl.prior_steps ? json(*cfg.ispl.prior_steps) : json(nullptr)},
               {"per_inner_step_decay", cfg.ispl.per_inner_step_decay}};
  j["eval"] = {{"interval", cfg.eval.interval},
               {"task_count", cfg.eval.task_count},
               {"adaptation_steps", cfg.eval.adaptation_steps},
               {"learning_rate", cfg.eval.learning_rate},
               {"train_shots", cfg.eval.train_shots},
               {"test_shots", cfg.eval.test_shots},
               {"episode_dir", cfg.eval.episode_dir}};
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2);
}

}  // namespace metalab::cli
