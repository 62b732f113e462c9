#include "metalab/verify.hpp"

#include "metalab/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace metalab::verify {
namespace {

Vector gaussian_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

Vector random_unit(Eigen::Index n, Rng& rng) {
  Vector v;
  do {
    v = gaussian_vector(n, rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

// Smooth, nearly straight path: geometric step lengths along u with a small
// quadratic bend along v, like a gradient-descent run on a convex valley.
linalg::TrajectoryMatrix smooth_trajectory(int d, int n, Rng& rng) {
  std::uniform_real_distribution<double> ratio(0.6, 0.95);
  std::uniform_real_distribution<double> first(0.5, 2.0);
  std::uniform_real_distribution<double> bend(0.0, 0.05);
  const Vector start = gaussian_vector(d, rng);
  const Vector u = random_unit(d, rng);
  Vector v = random_unit(d, rng);
  v -= v.dot(u) * u;
  v /= v.norm();
  const double r = ratio(rng);
  const double step = first(rng);
  const double kappa = bend(rng);
  linalg::TrajectoryMatrix w{Matrix(d, n)};
  double t = 0.0;
  double len = step;
  for (int j = 0; j < n; ++j) {
    t += len;
    len *= r;
    w.columns.col(j) = start + t * u + kappa * t * t * v;
  }
  return w;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(3);
  o << std::scientific << v;
  return o.str();
}

template <class F>
SuiteResult timed(std::string name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r = body();
  r.name = std::move(name);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

ShiftReport check_isotropic_shift(const Matrix& c, double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw std::invalid_argument("check_isotropic_shift: sigma2 must be positive");
  ShiftReport rep;
  const linalg::EigenDecomposition base = linalg::sym_eigen(c);
  rep.original_values = base.values;
  const Eigen::Index n = base.values.size();
  const double scale = std::max(1.0, std::abs(base.values(0)));
  if (base.values(n - 1) < -1e-12 * scale) {
    rep.reason = "matrix is not positive semidefinite";
    return rep;
  }
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    if (base.values(k) - base.values(k + 1) <= kMinEigenGap) {
      rep.reason = "near-degenerate spectrum: eigenvalue gap " + fmt(base.values(k) - base.values(k + 1));
      return rep;
    }
  }
  const Matrix shifted_matrix = c + sigma2 * Matrix::Identity(n, n);
  const linalg::EigenDecomposition shifted = linalg::sym_eigen(shifted_matrix);
  rep.shifted_values = shifted.values;
  for (Eigen::Index k = 0; k < n; ++k) {
    rep.max_eigvec_angle =
        std::max(rep.max_eigvec_angle, linalg::principal_angle(base.vectors.col(k), shifted.vectors.col(k)));
    rep.eigenvalue_shift_error =
        std::max(rep.eigenvalue_shift_error, std::abs(shifted.values(k) - (base.values(k) + sigma2)));
  }
  rep.valid = true;
  return rep;
}

DiscardCheck check_discard_ratio(double lambda, double lambda_o, double xi) {
  DiscardCheck r;
  r.lambda = lambda;
  r.lambda_o = lambda_o;
  r.xi = xi;
  r.valid_regime = lambda > lambda_o && lambda_o > xi && xi > 0.0;
  r.computable = lambda > 0.0 && lambda > xi && std::isfinite(lambda) && std::isfinite(lambda_o) && std::isfinite(xi);
  if (!r.computable) {
    r.before_ratio = r.after_ratio = r.diff = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.before_ratio = lambda_o / lambda;
  r.after_ratio = (lambda_o - xi) / (lambda - xi);
  r.diff = xi * (lambda - lambda_o) / (lambda * (lambda - xi));
  r.identity_holds = std::abs((r.before_ratio - r.after_ratio) - r.diff) <= kDiscardIdentityTolerance;
  r.positive = r.diff > 0.0;
  return r;
}

SnrReport snr_truncation_demo(const linalg::TrajectoryMatrix& w, std::span<const int> planted_noise_columns) {
  for (int j : planted_noise_columns)
    if (j < 0 || j >= w.steps()) throw std::invalid_argument("snr_truncation_demo: planted column out of range");
  const auto [centered, mean] = linalg::mean_center(w);
  const auto md = linalg::principal_direction(centered);
  if (!md) throw std::invalid_argument("snr_truncation_demo: degenerate trajectory");

  SnrReport rep;
  rep.spectrum = md->spectrum;
  rep.direction = md->direction;
  rep.zeta = md->zeta;
  rep.retained_share = md->zeta;
  rep.tail_share = 1.0 - md->zeta;
  rep.spectrum_sorted = true;
  for (Eigen::Index k = 0; k + 1 < rep.spectrum.size(); ++k)
    if (rep.spectrum(k) < rep.spectrum(k + 1)) rep.spectrum_sorted = false;

  double total = 0.0;
  double outside = 0.0;
  for (int j : planted_noise_columns) {
    const Vector col = centered.columns.col(j);
    const double along = col.dot(rep.direction);
    total += col.squaredNorm();
    outside += std::max(0.0, col.squaredNorm() - along * along);
  }
  rep.planted_orthogonal_share = total > 0.0 ? outside / total : 0.0;
  return rep;
}

Theorem1Report empirical_theorem1(int trials, int d, int n, double sigma, std::uint64_t seed, NoiseScale scale) {
  if (trials < 10) throw std::invalid_argument("empirical_theorem1: trials must be >= 10");
  if (d < 2 || n < 3) throw std::invalid_argument("empirical_theorem1: need d >= 2 and n >= 3");
  if (!(sigma >= 0.0)) throw std::invalid_argument("empirical_theorem1: sigma must be nonnegative");
  Theorem1Report rep;
  for (int t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(t)});
    const linalg::TrajectoryMatrix clean = smooth_trajectory(d, n, rng);
    const auto [centered, mean] = linalg::mean_center(clean);
    double s = sigma;
    if (scale == NoiseScale::relative_to_snapshot_std)
      s *= std::sqrt(centered.columns.squaredNorm() / static_cast<double>(d * n));

    linalg::TrajectoryMatrix noisy = clean;
    std::normal_distribution<double> g(0.0, 1.0);
    if (s > 0.0)
      for (Eigen::Index j = 0; j < noisy.columns.cols(); ++j)
        for (Eigen::Index i = 0; i < noisy.columns.rows(); ++i) noisy.columns(i, j) += s * g(rng);

    const auto clean_dir = linalg::principal_direction(centered);
    const auto noisy_dir = linalg::principal_direction(linalg::mean_center(noisy).first);
    if (!clean_dir || !noisy_dir) throw std::logic_error("empirical_theorem1: degenerate generated trajectory");
    const Vector clean_rep = clean.columns.col(n - 1) - clean.columns.col(0);
    const Vector noisy_rep = noisy.columns.col(n - 1) - noisy.columns.col(0);
    rep.angles_eigen.push_back(linalg::principal_angle(clean_dir->direction, noisy_dir->direction));
    rep.angles_reptile.push_back(linalg::principal_angle(clean_rep, noisy_rep));
  }
  for (std::size_t i = 0; i < rep.angles_eigen.size(); ++i) {
    rep.mean_angle_eigen += rep.angles_eigen[i];
    rep.mean_angle_reptile += rep.angles_reptile[i];
  }
  rep.mean_angle_eigen /= trials;
  rep.mean_angle_reptile /= trials;
  return rep;
}

Vector scatter_direction(const linalg::TrajectoryMatrix& centered) {
  const Matrix& w = centered.columns;
  Matrix scatter = w * w.transpose();
  scatter = 0.5 * (scatter + scatter.transpose());
  return linalg::sym_eigen(scatter).vectors.col(0);
}

Matrix random_psd(int size, double min_gap, std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("random_psd: size must be >= 1");
  Rng rng = make_rng(seed, {0x95DULL});
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> gap(min_gap, min_gap + 1.0);
  Matrix a(size, size);
  for (int j = 0; j < size; ++j)
    for (int i = 0; i < size; ++i) a(i, j) = g(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
  Vector values(size);
  double v = gap(rng) - min_gap;
  for (int k = 0; k < size; ++k) {
    values(k) = v;
    v += gap(rng);
  }
  Matrix c = q * values.asDiagonal() * q.transpose();
  return 0.5 * (c + c.transpose());
}

SuiteResult run_theorem1_suite(std::uint64_t seed) {
  return timed("theorem1", [&] {
    SuiteResult r;
    double worst_angle = 0.0;
    double worst_shift = 0.0;
    int invalid = 0;
    std::uniform_int_distribution<int> size(2, 10);
    std::uniform_real_distribution<double> sig(0.01, 2.0);
    for (int t = 0; t < 100; ++t) {
      Rng rng = make_rng(seed, {0x7E1ULL, static_cast<std::uint64_t>(t)});
      const int dim = size(rng);
      const std::uint64_t psd_seed = rng();
      const double sigma2 = sig(rng);
      const ShiftReport rep = check_isotropic_shift(random_psd(dim, 0.1, psd_seed), sigma2);
      if (!rep.valid) {
        ++invalid;
        continue;
      }
      worst_angle = std::max(worst_angle, rep.max_eigvec_angle);
      worst_shift = std::max(worst_shift, rep.eigenvalue_shift_error);
    }
    const Theorem1Report emp = empirical_theorem1(200, 50, 8, 0.1, derive_seed(seed, {0x7E2ULL}));
    const bool exact_ok = invalid == 0 && worst_angle < 1e-8 && worst_shift < 1e-10;
    const bool emp_ok = emp.mean_angle_eigen < emp.mean_angle_reptile;
    r.passed = exact_ok && emp_ok;
    r.detail = "100 matrices: max angle " + fmt(worst_angle) + ", max shift error " + fmt(worst_shift) +
               (invalid ? ", " + std::to_string(invalid) + " rejected" : "") + "; 200 noisy trajectories: mean angle " +
               fmt(emp.mean_angle_eigen) + " (main direction) vs " + fmt(emp.mean_angle_reptile) + " (last-first)";
    return r;
  });
}

SuiteResult run_theorem2_suite(std::uint64_t seed) {
  return timed("theorem2", [&] {
    SuiteResult r;
    Rng rng = make_rng(seed, {0x7E3ULL});
    std::uniform_real_distribution<double> top(1e-3, 100.0);
    std::uniform_real_distribution<double> frac(0.01, 0.99);
    int failures = 0;
    double worst = 0.0;
    for (int t = 0; t < 10000; ++t) {
      const double lambda = top(rng);
      const double lambda_o = lambda * frac(rng);
      const double xi = lambda_o * frac(rng);
      const DiscardCheck c = check_discard_ratio(lambda, lambda_o, xi);
      worst = std::max(worst, std::abs((c.before_ratio - c.after_ratio) - c.diff));
      if (!c.valid_regime || !c.identity_holds || !c.positive) ++failures;
    }
    r.passed = failures == 0;
    r.detail = "10000 triples: " + std::to_string(failures) + " failures, max identity error " + fmt(worst);
    return r;
  });
}

SuiteResult run_snr_suite(std::uint64_t seed) {
  return timed("snr", [&] {
    SuiteResult r;
    int failures = 0;
    double worst_angle = 0.0;
    double worst_rank1 = 0.0;
    for (int t = 0; t < 50; ++t) {
      Rng rng = make_rng(seed, {0x5A1ULL, static_cast<std::uint64_t>(t)});
      const int d = 8 + static_cast<int>(rng() % 40);
      const int n = 4 + static_cast<int>(rng() % 7);
      const Vector u = random_unit(d, rng);
      Vector v = random_unit(d, rng);
      v -= v.dot(u) * u;
      v /= v.norm();
      std::uniform_real_distribution<double> coef(-3.0, 3.0);

      // Rank-1 trajectory: everything is retained.
      linalg::TrajectoryMatrix rank1{Matrix(d, n)};
      for (int j = 0; j < n; ++j) rank1.columns.col(j) = (j + 1.0) * u;
      const SnrReport r1 = snr_truncation_demo(rank1, {});
      worst_rank1 = std::max({worst_rank1, std::abs(r1.retained_share - 1.0), std::abs(r1.tail_share)});

      // Clean columns along u plus one planted column whose centered part is
      // orthogonal to u and smaller than the clean spread.
      linalg::TrajectoryMatrix planted{Matrix(d, n)};
      const int noisy = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
      std::vector<double> a(static_cast<std::size_t>(n));
      double mean_a = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j == noisy) continue;
        a[static_cast<std::size_t>(j)] = coef(rng) + 3.0 * j;
        mean_a += a[static_cast<std::size_t>(j)];
      }
      mean_a /= n - 1;
      double spread = 0.0;
      for (int j = 0; j < n; ++j)
        if (j != noisy) spread += (a[static_cast<std::size_t>(j)] - mean_a) * (a[static_cast<std::size_t>(j)] - mean_a);
      const double s = 0.5 * std::sqrt(spread);
      for (int j = 0; j < n; ++j)
        planted.columns.col(j) = j == noisy ? Vector(mean_a * u + s * v) : Vector(a[static_cast<std::size_t>(j)] * u);
      const int idx[] = {noisy};
      const SnrReport rp = snr_truncation_demo(planted, idx);
      const double angle = linalg::principal_angle(rp.direction, u);
      worst_angle = std::max(worst_angle, angle);
      if (angle >= 1e-6 || !rp.spectrum_sorted || rp.planted_orthogonal_share < 1.0 - 1e-9) ++failures;

      // Random trajectory: spectrum must come back sorted.
      linalg::TrajectoryMatrix random{Matrix(d, n)};
      for (int j = 0; j < n; ++j) random.columns.col(j) = gaussian_vector(d, rng);
      if (!snr_truncation_demo(random, {}).spectrum_sorted) ++failures;
    }
    if (worst_rank1 > 1e-12) ++failures;
    r.passed = failures == 0;
    r.detail = "50 planted cases: max angle to clean signal " + fmt(worst_angle) + ", rank-1 share error " +
               fmt(worst_rank1) + ", " + std::to_string(failures) + " failures";
    return r;
  });
}

SuiteResult run_gram_equivalence_suite(std::uint64_t seed) {
  return timed("gram-equivalence", [&] {
    SuiteResult r;
    double worst = 0.0;
    int failures = 0;
    for (int t = 0; t < 100; ++t) {
      Rng rng = make_rng(seed, {0x6A1ULL, static_cast<std::uint64_t>(t)});
      const int d = 8 + static_cast<int>(rng() % 57);
      const int n = 3 + static_cast<int>(rng() % 8);
      const Vector drift = gaussian_vector(d, rng);
      linalg::TrajectoryMatrix w{Matrix(d, n)};
      Vector cur = gaussian_vector(d, rng);
      for (int j = 0; j < n; ++j) {
        cur += drift + 0.5 * gaussian_vector(d, rng);
        w.columns.col(j) = cur;
      }
      const auto centered = linalg::mean_center(w).first;
      const auto md = linalg::principal_direction(centered);
      if (!md) {
        ++failures;
        continue;
      }
      const double angle = linalg::principal_angle(md->direction, scatter_direction(centered));
      worst = std::max(worst, angle);
      if (!(angle < 1e-6)) ++failures;
    }
    r.passed = failures == 0;
    r.detail = "100 trajectories: max angle Gram vs scatter " + fmt(worst) + ", " + std::to_string(failures) + " failures";
    return r;
  });
}

std::vector<SuiteResult> run_suites(const std::string& name, std::uint64_t seed) {
  if (name == "theorem1") return {run_theorem1_suite(seed)};
  if (name == "theorem2") return {run_theorem2_suite(seed)};
  if (name == "snr") return {run_snr_suite(seed)};
  if (name == "gram-equivalence") return {run_gram_equivalence_suite(seed)};
  if (name == "all")
    return {run_theorem1_suite(seed), run_theorem2_suite(seed), run_snr_suite(seed), run_gram_equivalence_suite(seed)};
  throw std::invalid_argument("unknown verify suite '" + name + "'");
}

}  // namespace metalab::verify
