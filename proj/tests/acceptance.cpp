// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion ids as
// arguments to run a subset (e.g. `acceptance 1 2 3`).

#include "metalab/commands.hpp"
#include "metalab/ispl.hpp"
#include "metalab/linalg.hpp"
#include "metalab/meta.hpp"
#include "metalab/rng.hpp"
#include "metalab/run_config.hpp"
#include "metalab/tasks.hpp"
#include "metalab/verify.hpp"
#include "gradcheck.hpp"
#include "planted.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace metalab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path kConfigDir = METALAB_CONFIG_DIR;

// 1. Gram-path principal direction vs the d x d scatter eigenvector.
Outcome gram_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::uniform_int_distribution<int> dd(8, 64), nn_(3, 10);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = dd(rng), n = nn_(rng);
    linalg::TrajectoryMatrix w{linalg::Matrix(d, n)};
    for (Eigen::Index i = 0; i < w.columns.size(); ++i) w.columns.data()[i] = g(rng);
    const auto c = linalg::mean_center(w).first;
    const auto md = linalg::principal_direction(c);
    if (!md) return {false, "degenerate random trajectory"};
    Eigen::SelfAdjointEigenSolver<linalg::Matrix> es(c.columns * c.columns.transpose());
    worst = std::max(worst, linalg::principal_angle(md->direction, es.eigenvectors().col(d - 1)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 5.0, fmt("max angle %.3g rad (< 1e-6), %.2f s (< 5 s)", worst, secs)};
}

// 2. Eigenvectors of C and C + s I coincide; eigenvalues shift by s.
Outcome isotropic_shift() {
  const auto t0 = Clock::now();
  double angle = 0.0, shift = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const int size = 2 + static_cast<int>(t % 9);
    const double sigma2 = 0.05 + 0.01 * static_cast<double>(t);
    const auto r = verify::check_isotropic_shift(verify::random_psd(size, 0.1, 5000 + t), sigma2);
    if (!r.valid) return {false, "random matrix rejected: " + r.reason};
    angle = std::max(angle, r.max_eigvec_angle);
    shift = std::max(shift, r.eigenvalue_shift_error);
  }
  const double secs = seconds_since(t0);
  return {angle < 1e-8 && shift < 1e-10 && secs < 1.0,
          fmt("max angle %.3g (< 1e-8), max shift error %.3g (< 1e-10), %.3f s (< 1 s)", angle, shift, secs)};
}

// 3. Discard identity and strict improvement over random valid triples.
Outcome discard_ratio() {
  const auto t0 = Clock::now();
  Rng rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int positive = 0;
  for (int t = 0; t < 10000; ++t) {
    const double xi = 1e-3 + 5.0 * u(rng);
    const double lambda_o = xi + 1e-3 + 10.0 * u(rng);
    const double lambda = lambda_o + 1e-3 + 10.0 * u(rng);
    const auto d = verify::check_discard_ratio(lambda, lambda_o, xi);
    const double direct = lambda_o / lambda - (lambda_o - xi) / (lambda - xi);
    worst = std::max(worst, std::abs(direct - d.diff));
    positive += d.valid_regime && d.identity_holds && d.diff > 0.0;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && positive == 10000 && secs < 1.0,
          fmt("max identity error %.3g (<= 1e-12), %d/10000 positive, %.3f s (< 1 s)", worst, positive, secs)};
}

// 4. Analytic gradients vs central differences.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    worst = std::max(worst, testing::max_relative_fd_error(testing::random_grad_case(9000 + seed)));
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0, fmt("max relative error %.3g (< 1e-5) over 20 cases, %.2f s (< 10 s)", worst, secs)};
}

// 5. Sine regression ordering over five seeds.
Outcome sine_ordering() {
  cli::RunConfig cfg = cli::load_run_config(kConfigDir / "sine.json");
  int er_beats_reptile = 0, er_below_baselines = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const auto c = cli::run_compare_directions(cfg);
    const double er = c.series[0].back(), rep = c.series[1].back(), ag = c.series[2].back(), aw = c.series[3].back();
    er_beats_reptile += er < rep;
    er_below_baselines += er < ag && er < aw;
    detail += fmt(" [seed %d: er %.4g rep %.4g avg-grad %.4g avg-weights %.4g]", static_cast<int>(seed), er, rep, ag, aw);
    std::fflush(stdout);
  }
  return {er_beats_reptile >= 4 && er_below_baselines >= 4,
          fmt("ER < Reptile in %d/5 (need 4), ER below both baselines in %d/5 (need 4);", er_beats_reptile,
              er_below_baselines) +
              detail};
}

// 6. Noisy classification ordering over five seeds.
Outcome noisy_classification() {
  const cli::RunConfig base = cli::load_run_config(kConfigDir / "noisy_cls.json");
  int er_beats_reptile = 0, ispl_not_worse = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto run = [&](meta::Algorithm a, bool ispl) {
      cli::RunConfig cfg = base;
      cfg.seed = seed;
      cfg.meta.algorithm = a;
      cfg.ispl_enabled = ispl;
      return cli::run_training(cfg).test_at_best->metric;
    };
    const double rep = run(meta::Algorithm::reptile, false);
    const double er = run(meta::Algorithm::eigen_reptile, false);
    const double er_ispl = run(meta::Algorithm::eigen_reptile, true);
    er_beats_reptile += er > rep;
    ispl_not_worse += er_ispl >= er;
    detail += fmt(" [seed %d: reptile %.4f er %.4f er+ispl %.4f]", static_cast<int>(seed), rep, er, er_ispl);
  }
  return {er_beats_reptile >= 4 && ispl_not_worse >= 3,
          fmt("ER > Reptile in %d/5 (need 4), ER+ISPL >= ER in %d/5 (need 3);", er_beats_reptile, ispl_not_worse) +
              detail};
}

// 7. Per-iteration cost roughly linear in the parameter count.
double seconds_per_iteration(int width) {
  meta::OuterLoopSettings s;
  s.meta.algorithm = meta::Algorithm::eigen_reptile;
  s.meta.beta = 0.1;
  s.meta.meta_batch = 10;
  s.meta.inner_steps = 5;
  s.meta.outer_iterations = 60;
  s.network = nn::NetworkSpec::mlp(1, {width, width}, 1, nn::Activation::tanh, nn::OutputHead::regression_linear);
  const tasks::SineTaskSource src(7, 10, 10);
  double best = 1e300;
  for (int rep = 0; rep < 3; ++rep) {
    const auto t0 = Clock::now();
    meta::outer_loop(s, src);
    best = std::min(best, seconds_since(t0) / s.meta.outer_iterations);
  }
  return best;
}

Outcome complexity() {
  const auto t0 = Clock::now();
  const auto small = nn::NetworkSpec::mlp(1, {64, 64}, 1, nn::Activation::tanh, nn::OutputHead::regression_linear);
  const auto large = nn::NetworkSpec::mlp(1, {91, 91}, 1, nn::Activation::tanh, nn::OutputHead::regression_linear);
  const double d_ratio = static_cast<double>(large.param_count()) / static_cast<double>(small.param_count());
  const double a = seconds_per_iteration(64), b = seconds_per_iteration(91);
  const double secs = seconds_since(t0);
  return {b / a <= 3.0 && secs < 120.0,
          fmt("d %zu -> %zu (x%.3f), %.3g -> %.3g s/iteration (x%.3f, <= 3), %.1f s (< 2 min)", small.param_count(),
              large.param_count(), d_ratio, a, b, b / a, secs)};
}

// 8. Two single-threaded CLI training runs write identical metrics.csv.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "metalab_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  cli::RunConfig cfg = cli::load_run_config(kConfigDir / "sine.json");
  cfg.meta.outer_iterations = 100;
  cfg.eval.interval = 25;
  cfg.eval.task_count = 20;
  cfg.threads = 1;
  const fs::path config = dir / "config.json";
  std::ofstream(config) << cli::to_json(cfg);
  std::string contents[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("run" + std::to_string(i));
    const std::string cmd = std::string(METALAB_CLI_PATH) + " train --threads 1 --config " + config.string() +
                            " --output " + out.string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, fmt("train run %d failed", i)};
    contents[i] = slurp(out / "metrics.csv");
  }
  const bool same = !contents[0].empty() && contents[0] == contents[1];
  return {same, fmt("metrics.csv %zu bytes, byte-identical: %s", contents[0].size(), same ? "yes" : "no")};
}

// 9. ISPL vote losses and discards on planted-outlier tasks.
Outcome ispl_planted() {
  ispl::ISPLConfig cfg;
  cfg.gamma0 = 9.0;
  cfg.mu = 0.0;
  const auto opt = nn::OptimizerState::sgd(0.05);
  double loss[2] = {0, 0}, drop[2] = {0, 0};
  int count[2] = {0, 0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto task = testing::planted_task(40000 + seed);
    const auto phi = nn::init_params(testing::planted_net(), seed);
    ispl::SelectionMask mask;
    ispl::ispl_inner_loop(phi, testing::planted_net(), task.train, 5, opt, cfg, 0, seed, &mask);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const int k = task.corrupted[i] ? 1 : 0;
      loss[k] += mask.mean_losses[i];
      drop[k] += mask.keep[i] ? 0.0 : 1.0;
      ++count[k];
    }
  }
  const double lc = loss[1] / count[1], ll = loss[0] / count[0];
  const double dc = drop[1] / count[1], dl = drop[0] / count[0];
  return {lc > ll && dc > dl,
          fmt("mean vote loss corrupted %.4g vs clean %.4g; discarded corrupted %.3f vs clean %.3f (50 seeds)", lc, ll,
              dc, dl)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gram-trick equivalence", gram_equivalence},
      {2, "isotropic-shift exact check", isotropic_shift},
      {3, "discard-ratio inequality", discard_ratio},
      {4, "gradient correctness", gradient_check},
      {5, "sine regression ordering", sine_ordering},
      {6, "noisy classification ordering", noisy_classification},
      {7, "complexity smoke test", complexity},
      {8, "training determinism", determinism},
      {9, "ISPL planted outliers", ispl_planted},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.passed;
    std::printf("%s %d %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
