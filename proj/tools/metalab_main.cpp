#include "metalab/commands.hpp"
#include "metalab/run_config.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

using namespace metalab::cli;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required) {
  auto* opt = cmd->add_option("--config", o.config, "JSON run configuration");
  if (config_required) opt->required();
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--threads", o.threads, "Task-parallel inner loops (default 1)")->check(CLI::PositiveNumber);
  cmd->add_option("--output", o.output, "Override the output directory");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.output) cfg.output_dir = *o.output;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metalab: trajectory-direction meta-learning experiments"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, verify_o, compare_o;
  auto* train = app.add_subcommand("train", "Meta-train and write metrics.csv / final_summary.json");
  add_common(train, train_o, true);

  std::string summary_path;
  bool use_best = false;
  auto* eval = app.add_subcommand("eval", "Evaluate trained parameters on fresh meta-test tasks");
  eval->add_option("summary", summary_path, "final_summary.json from a train run")->required();
  eval->add_flag("--best", use_best, "Use the best checkpoint instead of the final parameters");
  add_common(eval, eval_o, true);

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "Run numerical property suites");
  verify->add_option("suite", suite, "theorem1 | theorem2 | snr | gram-equivalence | all");
  add_common(verify, verify_o, false);

  auto* compare = app.add_subcommand("compare-directions", "Train all four update directions on sine tasks");
  add_common(compare, compare_o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return guarded(
      [&]() -> int {
        if (train->parsed()) return cmd_train(resolve(train_o), std::cout);
        if (eval->parsed()) return cmd_eval(summary_path, resolve(eval_o), use_best, std::cout);
        if (verify->parsed()) {
          std::uint64_t seed = 1;
          if (!verify_o.config.empty()) seed = resolve(verify_o).seed;
          if (verify_o.seed) seed = *verify_o.seed;
          return cmd_verify(suite, seed, std::cout);
        }
        return cmd_compare_directions(resolve(compare_o), std::cout);
      },
      std::cerr);
}
