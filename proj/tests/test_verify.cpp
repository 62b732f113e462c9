#include "metalab/rng.hpp"
#include "metalab/verify.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

using namespace metalab;
using namespace metalab::verify;

TEST_CASE("isotropic shift on a diagonal matrix") {
  Matrix c = Matrix::Zero(2, 2);
  c(0, 0) = 3.0;
  c(1, 1) = 1.0;
  const auto r = check_isotropic_shift(c, 0.5);
  REQUIRE(r.valid);
  CHECK(r.max_eigvec_angle == 0.0);
  CHECK(r.shifted_values(0) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(r.shifted_values(1) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(r.eigenvalue_shift_error < 1e-15);
}

TEST_CASE("isotropic shift rejects ties and bad input") {
  const auto r = check_isotropic_shift(Matrix::Identity(3, 3), 0.3);
  CHECK_FALSE(r.valid);
  CHECK_FALSE(r.reason.empty());
  Matrix neg = Matrix::Zero(2, 2);
  neg(0, 0) = 1.0;
  neg(1, 1) = -1.0;
  CHECK_FALSE(check_isotropic_shift(neg, 0.3).valid);
}

TEST_CASE("isotropic shift is exact on random distinct-spectrum matrices") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int size = 2 + static_cast<int>(seed % 9);
    const Matrix c = random_psd(size, 0.1, seed);
    // random_psd contract, checked with an independent solver.
    Eigen::SelfAdjointEigenSolver<Matrix> es(c);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    for (Eigen::Index k = 0; k + 1 < es.eigenvalues().size(); ++k)
      CHECK(es.eigenvalues()(k + 1) - es.eigenvalues()(k) >= 0.1 - 1e-9);
    const auto r = check_isotropic_shift(c, 0.3);
    REQUIRE(r.valid);
    CHECK(r.max_eigvec_angle < 1e-8);
    CHECK(r.eigenvalue_shift_error < 1e-10);
  }
}

TEST_CASE("discard ratio examples") {
  const auto d = check_discard_ratio(10.0, 2.0, 1.0);
  CHECK(d.valid_regime);
  CHECK(d.before_ratio == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(d.after_ratio == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(d.diff == doctest::Approx(8.0 / 90.0).epsilon(1e-15));
  CHECK(d.identity_holds);
  CHECK(d.positive);

  const auto zero_xi = check_discard_ratio(10.0, 2.0, 0.0);
  CHECK(zero_xi.computable);
  CHECK_FALSE(zero_xi.valid_regime);
  CHECK(zero_xi.diff == 0.0);
  const auto equal = check_discard_ratio(4.0, 4.0, 1.0);
  CHECK(equal.diff == 0.0);
  CHECK_FALSE(equal.positive);
  const auto bad = check_discard_ratio(1.0, 2.0, 3.0);
  CHECK_FALSE(bad.computable);
  CHECK_FALSE(bad.valid_regime);
}

TEST_CASE("discard identity over random triples") {
  Rng rng(36);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10000; ++t) {
    const double xi = 1e-3 + u(rng);
    const double lambda_o = xi + 1e-3 + 10.0 * u(rng);
    const double lambda = lambda_o + 1e-3 + 10.0 * u(rng);
    const auto d = check_discard_ratio(lambda, lambda_o, xi);
    REQUIRE(d.valid_regime);
    // Independent evaluation of the two ratios.
    const double before = lambda_o / lambda;
    const double after = (lambda_o - xi) / (lambda - xi);
    CHECK(std::abs((before - after) - d.diff) <= 1e-12);
    CHECK(d.identity_holds);
    CHECK(d.diff > 0.0);
  }
}

TEST_CASE("SNR truncation on rank one and planted noise") {
  linalg::TrajectoryMatrix rank1{Matrix(3, 4)};
  Vector dir(3);
  dir << 1, 2, 2;
  for (int j = 0; j < 4; ++j) rank1.columns.col(j) = (j - 1.5) * dir;
  const auto r = snr_truncation_demo(rank1, {});
  CHECK(r.retained_share == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.tail_share < 1e-12);
  CHECK(r.zeta == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.spectrum_sorted);

  // Clean signal along x; column 2 (x = 0) carries a smaller excursion
  // along y, orthogonal to the signal after centering.
  linalg::TrajectoryMatrix planted{Matrix::Zero(3, 6)};
  const double xs[6] = {-5, -3, 0, 0, 3, 5};
  for (int j = 0; j < 6; ++j) planted.columns(0, j) = xs[j];
  planted.columns(1, 2) = 0.5;
  const int noisy[] = {2};
  const auto p = snr_truncation_demo(planted, noisy);
  Vector x = Vector::Zero(3);
  x(0) = 1.0;
  CHECK(linalg::principal_angle(p.direction, x) < 1e-6);
  CHECK(p.tail_share > 0.0);
  CHECK(p.retained_share + p.tail_share == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 30; ++t) {
    linalg::TrajectoryMatrix w{Matrix(7, 2 + t % 8)};
    for (Eigen::Index i = 0; i < w.columns.size(); ++i) w.columns.data()[i] = g(rng);
    const auto s = snr_truncation_demo(w, {});
    CHECK(s.spectrum_sorted);
    for (Eigen::Index k = 0; k + 1 < s.spectrum.size(); ++k) CHECK(s.spectrum(k) >= s.spectrum(k + 1));
  }
  CHECK_THROWS_AS(snr_truncation_demo(linalg::TrajectoryMatrix{Matrix::Ones(3, 3)}, {}), std::invalid_argument);
  const int out_of_range[] = {9};
  CHECK_THROWS_AS(snr_truncation_demo(planted, out_of_range), std::invalid_argument);
}

TEST_CASE("scatter direction agrees with the Gram route") {
  Rng rng(15);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    linalg::TrajectoryMatrix w{Matrix(8 + t, 3 + t % 7)};
    for (Eigen::Index i = 0; i < w.columns.size(); ++i) w.columns.data()[i] = g(rng);
    const auto c = linalg::mean_center(w).first;
    const auto md = linalg::principal_direction(c);
    REQUIRE(md);
    CHECK(linalg::principal_angle(md->direction, scatter_direction(c)) < 1e-6);
  }
}

TEST_CASE("empirical noise robustness of the principal direction") {
  const auto zero = empirical_theorem1(20, 50, 8, 0.0, 3);
  CHECK(zero.mean_angle_eigen < 1e-12);
  CHECK(zero.mean_angle_reptile < 1e-12);

  int ordered = 0;
  for (std::uint64_t batch = 0; batch < 20; ++batch) {
    const auto r = empirical_theorem1(200, 50, 8, 0.1, 1000 + batch);
    REQUIRE(r.angles_eigen.size() == 200);
    for (std::size_t i = 0; i < r.angles_eigen.size(); ++i) {
      CHECK(r.angles_eigen[i] >= 0.0);
      CHECK(r.angles_eigen[i] <= std::numbers::pi / 2 + 1e-12);
      CHECK(r.angles_reptile[i] >= 0.0);
      CHECK(r.angles_reptile[i] <= std::numbers::pi / 2 + 1e-12);
    }
    ordered += r.mean_angle_eigen < r.mean_angle_reptile;
  }
  CHECK(ordered >= 19);
  CHECK_THROWS_AS(empirical_theorem1(5, 10, 4, 0.1, 1), std::invalid_argument);
}

TEST_CASE("suites") {
  for (const auto& name : {"theorem1", "theorem2", "snr", "gram-equivalence"}) {
    const auto results = run_suites(name, 1);
    REQUIRE(results.size() == 1);
    CHECK(results[0].passed);
    CHECK(results[0].name == name);
  }
  CHECK(run_suites("all", 1).size() == 4);
  CHECK_THROWS_AS(run_suites("theorem3", 1), std::invalid_argument);
}
