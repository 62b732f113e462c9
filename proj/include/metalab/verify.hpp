#pragma once

// Numerical checks of the noise-robustness claims behind the main direction:
// an isotropic shift leaves eigenvectors unchanged, discarding high-loss
// samples lowers the noise-to-signal eigenvalue ratio, and truncating the
// Gram spectrum drops the tail energy.

#include "metalab/linalg.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace metalab::verify {

using linalg::Matrix;
using linalg::Vector;

constexpr double kMinEigenGap = 1e-6;
constexpr double kDiscardIdentityTolerance = 1e-12;

struct ShiftReport {
  bool valid = false;  // false when the spectrum has a near-tie
  std::string reason;
  double max_eigvec_angle = 0.0;
  double eigenvalue_shift_error = 0.0;
  Vector original_values;
  Vector shifted_values;
};

/// Eigendecomposes C and C + sigma2 I and compares matched eigenpairs.
ShiftReport check_isotropic_shift(const Matrix& c, double sigma2);

struct DiscardCheck {
  double lambda = 0.0;
  double lambda_o = 0.0;
  double xi = 0.0;
  double before_ratio = 0.0;  // lambda_o / lambda
  double after_ratio = 0.0;   // (lambda_o - xi) / (lambda - xi)
  double diff = 0.0;          // xi (lambda - lambda_o) / (lambda (lambda - xi))
  bool computable = false;    // lambda > 0 and lambda > xi
  bool valid_regime = false;  // lambda > lambda_o > xi > 0
  bool identity_holds = false;
  bool positive = false;
};

DiscardCheck check_discard_ratio(double lambda, double lambda_o, double xi);

struct SnrReport {
  double zeta = 0.0;
  double retained_share = 0.0;  // share of the spectrum kept by the top direction
  double tail_share = 0.0;      // share of the discarded tail
  Vector spectrum;              // non-increasing
  Vector direction;
  double planted_orthogonal_share = 0.0;  // planted-column energy outside the top direction
  bool spectrum_sorted = false;
};

/// Mean-centers W, then reports the Gram spectrum split into the kept top
/// component and the discarded tail. Throws std::invalid_argument for a
/// degenerate W or out-of-range planted indices.
SnrReport snr_truncation_demo(const linalg::TrajectoryMatrix& w, std::span<const int> planted_noise_columns);

enum class NoiseScale { absolute, relative_to_snapshot_std };

struct Theorem1Report {
  double mean_angle_eigen = 0.0;
  double mean_angle_reptile = 0.0;
  std::vector<double> angles_eigen;
  std::vector<double> angles_reptile;
};

/// Random smooth trajectories perturbed with i.i.d. N(0, sigma^2) entries;
/// compares the clean-vs-noisy angle of the principal direction with that of
/// the last-minus-first direction. With relative_to_snapshot_std, sigma is a
/// multiple of the std of the centered clean snapshot entries.
Theorem1Report empirical_theorem1(int trials, int d, int n, double sigma, std::uint64_t seed,
                                  NoiseScale scale = NoiseScale::relative_to_snapshot_std);

/// Principal direction from the d x d scatter matrix W W^T (d <= 64).
Vector scatter_direction(const linalg::TrajectoryMatrix& centered);

/// Random symmetric PSD matrix with eigenvalues spaced at least min_gap apart.
Matrix random_psd(int size, double min_gap, std::uint64_t seed);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

SuiteResult run_theorem1_suite(std::uint64_t seed);
SuiteResult run_theorem2_suite(std::uint64_t seed);
SuiteResult run_snr_suite(std::uint64_t seed);
SuiteResult run_gram_equivalence_suite(std::uint64_t seed);

/// Suite names: theorem1, theorem2, snr, gram-equivalence, all.
/// Throws std::invalid_argument for an unknown name.
std::vector<SuiteResult> run_suites(const std::string& name, std::uint64_t seed);

}  // namespace metalab::verify
