#pragma once

// Small symmetric eigensolver and the trajectory principal direction via the
// n x n Gram matrix (W^T W) instead of the d x d scatter matrix (W W^T).

#include <Eigen/Dense>

#include <optional>
#include <utility>

namespace metalab::linalg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// d x n matrix of parameter snapshots; column j holds the parameters after
/// inner step j+1. Column-major storage keeps each snapshot contiguous.
struct TrajectoryMatrix {
  Matrix columns;

  Eigen::Index dim() const { return columns.rows(); }
  Eigen::Index steps() const { return columns.cols(); }
};

struct EigenDecomposition {
  Vector values;   // non-increasing
  Matrix vectors;  // orthonormal columns, same order as values
};

struct MainDirection {
  Vector direction;  // unit norm; sign is arbitrary at this layer
  double lambda1 = 0.0;
  double zeta = 0.0;  // lambda1 / sum of clamped eigenvalues
  Vector spectrum;    // Gram eigenvalues, non-increasing, unclamped
};

constexpr int kMaxJacobiSize = 64;
constexpr int kMaxJacobiSweeps = 100;
constexpr double kSymmetryTolerance = 1e-9;
constexpr double kDegenerateEigenvalue = 1e-12;
constexpr double kTieRelativeGap = 1e-9;

/// Subtracts the column mean. Returns the centered matrix and the mean.
std::pair<TrajectoryMatrix, Vector> mean_center(const TrajectoryMatrix& w);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix of size <= 64.
/// Throws std::invalid_argument for non-square / non-symmetric / oversized
/// input and ConvergenceError when 100 sweeps do not suffice.
EigenDecomposition sym_eigen(const Matrix& m);

/// Top principal direction of an already-centered trajectory via its Gram
/// matrix. std::nullopt when every Gram eigenvalue is below 1e-12.
std::optional<MainDirection> principal_direction(const TrajectoryMatrix& centered);

/// Sign-invariant angle arccos(|a.b| / (|a||b|)) in [0, pi/2].
double principal_angle(const Vector& a, const Vector& b);

}  // namespace metalab::linalg
