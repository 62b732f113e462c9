#include "metalab/linalg.hpp"

#include "metalab/diagnostics.hpp"
#include "metalab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace metalab::linalg {
namespace {

double off_diagonal_norm(const Matrix& a) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j) sum += a(i, j) * a(i, j);
  return std::sqrt(sum);
}

}  // namespace

std::pair<TrajectoryMatrix, Vector> mean_center(const TrajectoryMatrix& w) {
  if (w.steps() < 1) throw std::invalid_argument("mean_center needs at least one column");
  Vector mean = w.columns.rowwise().mean();
  TrajectoryMatrix centered{w.columns.colwise() - mean};
  return {std::move(centered), std::move(mean)};
}

EigenDecomposition sym_eigen(const Matrix& m) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n) throw std::invalid_argument("sym_eigen: matrix is not square");
  if (n == 0) throw std::invalid_argument("sym_eigen: empty matrix");
  if (n > kMaxJacobiSize) throw std::invalid_argument("sym_eigen: size exceeds 64");
  if (!m.allFinite()) throw std::invalid_argument("sym_eigen: non-finite entries");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale)
    throw std::invalid_argument("sym_eigen: matrix is not symmetric");

  Matrix a = 0.5 * (m + m.transpose());
  Matrix v = Matrix::Identity(n, n);
  // Relative stopping rule: off(A) <= 1e-12 * ||A||_F (invariant under the
  // rotations), so the criterion does not depend on the units of the input.
  const double target = 1e-12 * a.norm();

  bool converged = off_diagonal_norm(a) <= target;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J with J the (p, q) plane rotation.
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_diagonal_norm(a) <= target;
  }
  if (!converged)
    throw ConvergenceError("sym_eigen: Jacobi did not converge in " + std::to_string(kMaxJacobiSweeps) +
                           " sweeps");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  EigenDecomposition out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

std::optional<MainDirection> principal_direction(const TrajectoryMatrix& centered) {
  if (centered.steps() < 2) throw std::invalid_argument("principal_direction needs n >= 2 snapshots");
  const Matrix& w = centered.columns;
  Matrix gram = w.transpose() * w;
  gram = 0.5 * (gram + gram.transpose());
  const EigenDecomposition eig = sym_eigen(gram);

  const double lambda1 = eig.values(0);
  if (!(lambda1 >= kDegenerateEigenvalue)) return std::nullopt;

  if (eig.values.size() > 1 && lambda1 - eig.values(1) < kTieRelativeGap * lambda1)
    warn("principal_direction: top two Gram eigenvalues tie; taking the first after sorting");

  double clamped_sum = 0.0;
  for (Eigen::Index k = 0; k < eig.values.size(); ++k) {
    const double lam = eig.values(k);
    if (lam < -1e-9 * std::max(1.0, lambda1))
      warn("principal_direction: Gram eigenvalue " + std::to_string(lam) + " is markedly negative");
    clamped_sum += std::max(0.0, lam);
  }

  MainDirection md;
  md.direction = w * eig.vectors.col(0);
  md.direction /= md.direction.norm();
  md.lambda1 = lambda1;
  md.zeta = std::clamp(lambda1 / clamped_sum, 0.0, 1.0);
  md.spectrum = eig.values;
  return md;
}

double principal_angle(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("principal_angle of a zero vector");
  const Vector ua = a / na;
  const Vector ub = b / nb;
  // atan2 of the orthogonal residual keeps full precision near zero, where
  // acos(1 - eps) would floor the result at ~1e-8.
  const double c = ua.dot(ub);
  const double s = (ua - c * ub).norm();
  return std::atan2(s, std::abs(c));
}

}  // namespace metalab::linalg
