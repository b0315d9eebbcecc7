#pragma once

// Dense numerical kernels shared by the rest of the library: spectral radius,
// discrete Lyapunov and Riccati solvers, right pseudoinverse and the
// orthogonal projector onto the null space of a wide matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "deepo/errors.hpp"

namespace deepo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Numerical thresholds used across the library.
namespace tol {
/// Relative rank threshold: singular values below rank_rel * sigma_max count as zero.
inline constexpr double rank_rel = 1e-8;
/// A matrix is classified Schur stable when its spectral radius is below 1 - schur_margin.
inline constexpr double schur_margin = 1e-9;
/// Relative asymmetry accepted for inputs that must be symmetric.
inline constexpr double symmetry_rel = 1e-9;
/// Size limit for the Kronecker (vectorized) Lyapunov solve.
inline constexpr Eigen::Index kron_lyap_max_n = 32;
/// Riccati fixed-point stopping threshold (relative, Frobenius).
inline constexpr double dare_step = 1e-12;
inline constexpr int dare_max_iters = 100000;
}  // namespace tol

struct SpectrumReport {
  double radius = 0.0;
  bool is_schur_stable = false;
};

namespace detail {

inline void require_square(const Matrix& m, const char* name) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << name << " must be square, got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
}

inline void require_symmetric(const Matrix& m, const char* name) {
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).norm() > tol::symmetry_rel * scale) {
    throw InputError(std::string(name) + " is not symmetric");
  }
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_positive_definite(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  return llt.info() == Eigen::Success;
}

}  // namespace detail

/// Largest eigenvalue magnitude of a square real matrix.
inline double spectral_radius(const Matrix& m) {
  detail::require_square(m, "spectral_radius input");
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw SolverError("eigenvalue computation failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline SpectrumReport spectrum(const Matrix& m) {
  SpectrumReport rep;
  rep.radius = spectral_radius(m);
  rep.is_schur_stable = rep.radius < 1.0 - tol::schur_margin;
  return rep;
}

inline bool is_schur_stable(const Matrix& m) { return spectrum(m).is_schur_stable; }

/// Singular values of m in decreasing order.
inline Vector singular_values(const Matrix& m) {
  if (m.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues();
}

/// Numerical rank under the relative threshold tol::rank_rel.
inline Eigen::Index numerical_rank(const Matrix& m) {
  const Vector s = singular_values(m);
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  const double cut = tol::rank_rel * s(0);
  return (s.array() > cut).count();
}

inline double min_singular_value(const Matrix& m) {
  const Vector s = singular_values(m);
  return s.size() == 0 ? 0.0 : s(s.size() - 1);
}

/// Solves P = q + f' P f for Schur-stable f.
///
/// Up to tol::kron_lyap_max_n states the equation is solved exactly as the
/// n^2 x n^2 linear system (I - f' (x) f') vec(P) = vec(q); larger problems use
/// Smith's doubling iteration.
inline Matrix solve_dlyap(const Matrix& f, const Matrix& q) {
  detail::require_square(f, "f");
  detail::require_square(q, "q");
  if (f.rows() != q.rows()) throw DimensionError("solve_dlyap: f and q sizes differ");
  detail::require_symmetric(q, "q");
  const Eigen::Index n = f.rows();
  if (n == 0) return Matrix(0, 0);

  const double rho = spectral_radius(f);
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "solve_dlyap: f is not Schur stable (rho = " << rho << ")";
    throw InstabilityError(os.str(), rho);
  }

  Matrix p;
  if (n <= tol::kron_lyap_max_n) {
    const Matrix ft = f.transpose();
    Matrix lhs = Matrix::Identity(n * n, n * n);
    // vec(ft * P * f) = (f' (x) ft) vec(P) with column-major vec.
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        lhs.block(i * n, j * n, n, n) -= f(j, i) * ft;
      }
    }
    const Vector rhs = Eigen::Map<const Vector>(q.data(), n * n);
    const Vector sol = lhs.partialPivLu().solve(rhs);
    p = Eigen::Map<const Matrix>(sol.data(), n, n);
  } else {
    // Smith doubling: P = sum_k (f')^k q f^k, squaring the horizon each pass.
    p = q;
    Matrix a = f;
    for (int it = 0; it < 200; ++it) {
      const Matrix next = p + a.transpose() * p * a;
      const double step = (next - p).norm();
      p = next;
      a = a * a;
      if (step <= 1e-15 * std::max(1.0, p.norm()) || a.norm() < 1e-300) break;
    }
  }
  return detail::symmetrize(p);
}

/// Solves S = q + f S f' (the state-covariance form of the Lyapunov equation).
inline Matrix solve_dlyap_transposed(const Matrix& f, const Matrix& q) {
  return solve_dlyap(f.transpose(), q);
}

/// Residual ||P - (q + f' P f)||_F / max(1, ||P||_F).
inline double dlyap_residual(const Matrix& f, const Matrix& q, const Matrix& p) {
  return (p - q - f.transpose() * p * f).norm() / std::max(1.0, p.norm());
}

/// Right-hand side of the Riccati map: Q + A'PA - A'PB (R + B'PB)^{-1} B'PA.
inline Matrix riccati_map(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                          const Matrix& p) {
  const Matrix bp = b.transpose() * p;
  const Matrix gain_rhs = bp * a;
  const Matrix s = r + bp * b;
  return q + a.transpose() * p * a - gain_rhs.transpose() * s.llt().solve(gain_rhs);
}

/// Relative residual of the discrete algebraic Riccati equation.
inline double dare_residual(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                            const Matrix& p) {
  return (p - riccati_map(a, b, q, r, p)).norm() / std::max(1.0, p.norm());
}

/// Optimal LQR gain K = -(R + B'PB)^{-1} B'PA for a given Riccati solution.
inline Matrix lqr_gain(const Matrix& a, const Matrix& b, const Matrix& r, const Matrix& p) {
  const Matrix bp = b.transpose() * p;
  return -(r + bp * b).llt().solve(bp * a);
}

/// Stabilizing solution of P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA.
///
/// Riccati value iteration from P0 = Q; stops once successive iterates differ
/// by less than tol::dare_step relative to ||P||_F.
inline Matrix solve_dare(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r) {
  detail::require_square(a, "a");
  detail::require_square(q, "q");
  detail::require_square(r, "r");
  if (b.rows() != a.rows() || q.rows() != a.rows() || r.rows() != b.cols()) {
    throw DimensionError("solve_dare: inconsistent dimensions");
  }
  detail::require_symmetric(q, "q");
  detail::require_symmetric(r, "r");
  if (!detail::is_positive_definite(q)) throw InputError("solve_dare: q is not positive definite");
  if (!detail::is_positive_definite(r)) throw InputError("solve_dare: r is not positive definite");

  Matrix p = detail::symmetrize(q);
  for (int it = 0; it < tol::dare_max_iters; ++it) {
    Matrix next = detail::symmetrize(riccati_map(a, b, q, r, p));
    if (!next.allFinite()) throw SolverError("solve_dare: iteration produced non-finite values");
    const double step = (next - p).norm();
    p = std::move(next);
    if (step < tol::dare_step * std::max(1.0, p.norm())) {
      const double rho = spectral_radius(a + b * lqr_gain(a, b, r, p));
      if (!(rho < 1.0)) {
        throw SolverError("solve_dare: converged solution does not stabilize the closed loop");
      }
      return p;
    }
  }
  throw SolverError("solve_dare: no convergence within the iteration limit");
}

namespace detail {

inline Eigen::JacobiSVD<Matrix> full_row_rank_svd(const Matrix& m, const char* who) {
  if (m.rows() > m.cols()) {
    throw DimensionError(std::string(who) + ": matrix must be wide or square");
  }
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  const double smin = s.size() == 0 ? 0.0 : s(s.size() - 1);
  if (s.size() == 0 || !(smin > tol::rank_rel * s(0))) {
    std::ostringstream os;
    os << who << ": matrix is rank deficient (min singular value " << smin << ")";
    throw RankError(os.str(), smin);
  }
  return svd;
}

}  // namespace detail

/// Right inverse m' (m m')^{-1} of a full-row-rank matrix, computed by SVD.
inline Matrix right_pinv(const Matrix& m) {
  const auto svd = detail::full_row_rank_svd(m, "right_pinv");
  const Eigen::Index r = m.rows();
  return svd.matrixV().leftCols(r) * svd.singularValues().cwiseInverse().asDiagonal() *
         svd.matrixU().transpose();
}

/// Orthogonal projector I - x0^+ x0 onto the null space of x0, formed as Z Z'
/// from an orthonormal null-space basis Z.
inline Matrix projector_nullspace(const Matrix& x0_bar) {
  const auto svd = detail::full_row_rank_svd(x0_bar, "projector_nullspace");
  const Matrix z = svd.matrixV().rightCols(x0_bar.cols() - x0_bar.rows());
  return z * z.transpose();
}

}  // namespace deepo
