#include "metalab/ispl.hpp"

#include "metalab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace metalab::ispl {
namespace {

nn::Batch subset(const nn::Batch& b, const std::vector<Eigen::Index>& rows) {
  nn::Batch out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.inputs.resize(n, b.inputs.cols());
  if (b.targets.size() > 0) out.targets.resize(n, b.targets.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    out.inputs.row(i) = b.inputs.row(r);
    if (b.targets.size() > 0) out.targets.row(i) = b.targets.row(r);
    if (!b.labels.empty()) out.labels.push_back(b.labels[static_cast<std::size_t>(r)]);
  }
  return out;
}

}  // namespace

void ISPLConfig::validate() const {
  if (prior_count < 1) throw std::invalid_argument("ispl: prior count Q must be >= 1");
  if (!(gamma0 > 0.0)) throw std::invalid_argument("ispl: gamma0 must be positive");
  if (!(mu >= 0.0)) throw std::invalid_argument("ispl: mu must be nonnegative");
  if (period < 1) throw std::invalid_argument("ispl: period must be >= 1");
  if (!(prior_fraction > 0.0 && prior_fraction <= 1.0))
    throw std::invalid_argument("ispl: prior_fraction must lie in (0, 1]");
  if (prior_steps && *prior_steps < 0) throw std::invalid_argument("ispl: prior_steps must be >= 0");
}

std::vector<ParamVector> build_priors(const ParamVector& phi_star, const nn::NetworkSpec& spec,
                                      const nn::Batch& train, const ISPLConfig& cfg,
                                      const nn::OptimizerState& opt, int prior_steps,
                                      std::uint64_t seed) {
  cfg.validate();
  const Eigen::Index h = train.size();
  if (h == 0) throw std::invalid_argument("build_priors: empty training set");
  const auto subset_size = static_cast<Eigen::Index>(std::ceil(cfg.prior_fraction * static_cast<double>(h)));
  if (subset_size < 1) throw std::invalid_argument("build_priors: empty prior subset");

  std::vector<ParamVector> priors;
  priors.reserve(static_cast<std::size_t>(cfg.prior_count));
  for (int j = 0; j < cfg.prior_count; ++j) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(j)});
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(h));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(subset_size));
    std::sort(idx.begin(), idx.end());
    priors.push_back(trajectory::adapt(phi_star, spec, subset(train, idx), prior_steps, opt));
  }
  return priors;
}

std::vector<double> vote_losses(std::span<const ParamVector> priors, const nn::NetworkSpec& spec,
                                const nn::Batch& train) {
  if (priors.empty()) throw std::invalid_argument("vote_losses: need at least one prior");
  const nn::LossKind kind = nn::default_loss(spec);
  nn::Vector sum = nn::Vector::Zero(train.size());
  for (const auto& p : priors) sum += nn::per_sample_loss(p, spec, train, kind);
  sum /= static_cast<double>(priors.size());
  return {sum.data(), sum.data() + sum.size()};
}

SelectionMask select(std::span<const double> mean_losses, double gamma) {
  SelectionMask mask;
  mask.gamma_used = gamma;
  mask.mean_losses.assign(mean_losses.begin(), mean_losses.end());
  mask.keep.resize(mean_losses.size(), 0);
  for (std::size_t i = 0; i < mean_losses.size(); ++i) {
    if (!std::isfinite(mean_losses[i])) throw std::invalid_argument("select: non-finite loss");
    mask.keep[i] = mean_losses[i] < gamma ? 1 : 0;
  }
  if (!mean_losses.empty() && mask.selected_count() == 0) {
    const auto best = std::min_element(mean_losses.begin(), mean_losses.end());
    mask.keep[static_cast<std::size_t>(best - mean_losses.begin())] = 1;
  }
  return mask;
}

double gamma_at(std::int64_t iteration, const ISPLConfig& cfg) {
  if (iteration < 0) throw std::invalid_argument("gamma_at: negative iteration");
  const double decays = static_cast<double>(iteration / cfg.period);
  return std::max(0.0, cfg.gamma0 - cfg.mu * decays);
}

trajectory::TrajectoryRecord ispl_inner_loop(const ParamVector& phi, const nn::NetworkSpec& spec,
                                             const nn::Batch& train, int steps,
                                             const nn::OptimizerState& opt, const ISPLConfig& cfg,
                                             std::int64_t iteration, std::uint64_t seed,
                                             SelectionMask* mask_out) {
  cfg.validate();
  const int m = cfg.prior_steps.value_or(steps);
  const auto priors = build_priors(phi, spec, train, cfg, opt, m, seed);
  const auto losses = vote_losses(priors, spec, train);
  const double gamma = gamma_at(iteration, cfg);

  if (!cfg.per_inner_step_decay) {
    const SelectionMask mask = select(losses, gamma);
    if (mask_out) *mask_out = mask;
    return trajectory::run_inner_loop(phi, spec, train, steps, opt, &mask);
  }
  std::vector<SelectionMask> schedule;
  schedule.reserve(static_cast<std::size_t>(steps));
  for (int j = 0; j < steps; ++j) schedule.push_back(select(losses, std::max(0.0, gamma - cfg.mu * j)));
  if (mask_out) *mask_out = schedule.back();
  return trajectory::run_inner_loop_scheduled(phi, spec, train, steps, opt, schedule);
}

}  // namespace metalab::ispl
