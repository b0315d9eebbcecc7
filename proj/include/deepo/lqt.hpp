#pragma once

// Closed-form average cost and policy gradient of the setpoint tracking
// problem, for covariance policies (data route) and gain policies (model
// route).
//
// For a closed loop x+ = F x + c + w with input u = G x + d the stationary
// quantities are
//   P = Q + G' R G + F' P F                (value Hessian)
//   (I - F)' g = -Q delta + G' R d + F' P c (linear value term)
//   S = W + F S F'                         (state covariance)
//   x_bar = (I - F)^{-1} c                 (state mean)
// and J = delta' Q delta + d' R d + c' P c + 2 g' c + tr(P W).
// The data route uses F = X1_bar V, c = X1_bar h, G = U0_bar V, d = U0_bar h;
// the model route F = A + B K, c = B l, G = K, d = l.

#include <cmath>
#include <sstream>

#include "deepo/errors.hpp"
#include "deepo/matops.hpp"
#include "deepo/param.hpp"
#include "deepo/policy.hpp"

namespace deepo {

struct CostParams {
  Matrix q_mat;  // n x n, positive definite
  Matrix r_mat;  // m x m, positive definite
  Vector delta;  // n
  Matrix w_cov;  // n x n, PSD

  Eigen::Index n() const { return q_mat.rows(); }
  Eigen::Index m() const { return r_mat.rows(); }

  static CostParams identity(Eigen::Index n, Eigen::Index m, const Vector& delta,
                             double w_scale) {
    return {Matrix::Identity(n, n), Matrix::Identity(m, m), delta,
            w_scale * Matrix::Identity(n, n)};
  }

  void validate() const {
    const Eigen::Index n = q_mat.rows();
    if (q_mat.cols() != n || r_mat.rows() != r_mat.cols() || delta.size() != n ||
        w_cov.rows() != n || w_cov.cols() != n) {
      throw DimensionError("CostParams: inconsistent dimensions");
    }
    detail::require_symmetric(q_mat, "Q");
    detail::require_symmetric(r_mat, "R");
    detail::require_symmetric(w_cov, "W");
    if (!detail::is_positive_definite(q_mat)) throw InputError("CostParams: Q is not positive definite");
    if (!detail::is_positive_definite(r_mat)) throw InputError("CostParams: R is not positive definite");
    if (n > 0) {
      const double wmin = Eigen::SelfAdjointEigenSolver<Matrix>(w_cov, Eigen::EigenvaluesOnly)
                              .eigenvalues()(0);
      if (wmin < -1e-12 * std::max(1.0, w_cov.norm())) {
        throw InputError("CostParams: W is not positive semidefinite");
      }
    }
  }
};

/// Every policy-dependent quantity of one evaluation.
///
/// For covariance policies e_v is E_V = (U0_bar' R U0_bar + X1_bar' P X1_bar) V
/// and g_cap is G = X1_bar' g + U0_bar' R U0_bar h + X1_bar' P X1_bar h. For
/// gain policies they hold the gain-space counterparts E_K = R K + B' P (A + B K)
/// and G = B' g + R l + B' P B l. Either way the gradient is 2 [e_v g_cap] phi.
struct PolicyEvaluation {
  Matrix p_v;
  Matrix y_v;
  Matrix e_v;
  Vector g_xi;
  Vector g_cap;
  Matrix sigma_v;
  Vector x_bar;
  Matrix phi;
  double cost = 0.0;
  double rho = 0.0;

  /// 2 [e_v g_cap] phi.
  Matrix gradient() const {
    Matrix eg(e_v.rows(), e_v.cols() + 1);
    eg << e_v, g_cap;
    return 2.0 * eg * phi;
  }
};

struct GainGradient {
  Matrix k_grad;  // m x n
  Vector l_grad;  // m

  double norm() const { return std::sqrt(k_grad.squaredNorm() + l_grad.squaredNorm()); }
};

enum class FeasibilityCheck { equalities_and_stability, stability_only };

namespace detail {

inline constexpr double kMinResolventRcond = 1e-14;

/// Shared stationary analysis. `weight` is Q + G' R G, `cross` is G' R d.
inline PolicyEvaluation stationary_evaluation(const Matrix& f, const Vector& c, const Matrix& weight,
                                              const Vector& cross, double input_offset_cost,
                                              const CostParams& cp) {
  const Eigen::Index n = f.rows();
  PolicyEvaluation ev;
  ev.rho = spectral_radius(f);
  ev.p_v = solve_dlyap(f, symmetrize(weight));
  const Matrix resolvent = Matrix::Identity(n, n) - f;
  const Eigen::PartialPivLU<Matrix> lu(resolvent);
  if (!(lu.rcond() > kMinResolventRcond)) {
    throw ConditioningError("I - closed loop is numerically singular");
  }
  ev.y_v = lu.inverse();
  const Vector pc = ev.p_v * c;
  const Vector rhs = -cp.q_mat * cp.delta + cross + f.transpose() * pc;
  ev.g_xi = lu.transpose().solve(rhs);
  ev.sigma_v = solve_dlyap_transposed(f, cp.w_cov);
  ev.x_bar = lu.solve(c);
  ev.phi.resize(n + 1, n + 1);
  ev.phi.topLeftCorner(n, n) = ev.sigma_v + ev.x_bar * ev.x_bar.transpose();
  ev.phi.topRightCorner(n, 1) = ev.x_bar;
  ev.phi.bottomLeftCorner(1, n) = ev.x_bar.transpose();
  ev.phi(n, n) = 1.0;
  ev.cost = cp.delta.dot(cp.q_mat * cp.delta) + input_offset_cost + c.dot(pc) +
            2.0 * ev.g_xi.dot(c) + (ev.p_v * cp.w_cov).trace();
  return ev;
}

}  // namespace detail

/// Evaluates a covariance policy against the data-based closed loop.
///
/// With FeasibilityCheck::stability_only the equality constraints are not
/// enforced; the formulas stay valid for any V with rho(X1_bar V) < 1, which
/// finite-difference checks rely on.
inline PolicyEvaluation evaluate_xi(const CovariancePolicy& xi, const DataMatrices& dm,
                                    const CostParams& cp,
                                    FeasibilityCheck check = FeasibilityCheck::equalities_and_stability) {
  const Eigen::Index n = dm.n();
  const Eigen::Index m = dm.m();
  if (xi.v_mat.rows() != m + n || xi.v_mat.cols() != n || xi.h_vec.size() != m + n ||
      cp.n() != n || cp.m() != m) {
    throw DimensionError("evaluate_xi: inconsistent dimensions");
  }
  const Matrix f = dm.x1_bar * xi.v_mat;
  const FeasibilityReport feas = check_feasible(xi, dm);
  if (check == FeasibilityCheck::equalities_and_stability &&
      (feas.v_residual > kFeasTol || feas.h_residual > kFeasTol)) {
    std::ostringstream os;
    os << "evaluate_xi: policy violates the data constraints (||X0 V - I|| = " << feas.v_residual
       << ", ||X0 h|| = " << feas.h_residual << ")";
    throw FeasibilityError(os.str(), feas.v_residual, feas.h_residual);
  }
  if (!(feas.rho < 1.0)) {
    std::ostringstream os;
    os << "evaluate_xi: closed loop X1_bar V is unstable (rho = " << feas.rho << ")";
    throw FeasibilityError(os.str(), feas.v_residual, feas.h_residual);
  }

  const Matrix ru = cp.r_mat * dm.u0_bar;
  const Matrix rbar = dm.u0_bar.transpose() * ru;  // U0' R U0
  const Vector c = dm.x1_bar * xi.h_vec;
  const Matrix weight = cp.q_mat + xi.v_mat.transpose() * rbar * xi.v_mat;
  const Vector rbar_h = rbar * xi.h_vec;
  const Vector cross = xi.v_mat.transpose() * rbar_h;
  PolicyEvaluation ev =
      detail::stationary_evaluation(f, c, weight, cross, xi.h_vec.dot(rbar_h), cp);

  const Matrix xpx = dm.x1_bar.transpose() * ev.p_v * dm.x1_bar;
  ev.e_v = (rbar + xpx) * xi.v_mat;
  ev.g_cap = dm.x1_bar.transpose() * ev.g_xi + rbar_h + xpx * xi.h_vec;
  return ev;
}

/// Stacked gradient [dJ/dV | dJ/dh], (m + n) x (n + 1).
inline Matrix gradient_xi(const CovariancePolicy& xi, const DataMatrices& dm, const CostParams& cp,
                          FeasibilityCheck check = FeasibilityCheck::equalities_and_stability) {
  return evaluate_xi(xi, dm, cp, check).gradient();
}

/// Evaluates a gain policy on the model x+ = A x + B u + w.
inline PolicyEvaluation evaluate_theta(const GainPolicy& theta, const Matrix& a, const Matrix& b,
                                       const CostParams& cp) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  if (a.cols() != n || b.rows() != n || theta.k_gain.rows() != m || theta.k_gain.cols() != n ||
      theta.l_ff.size() != m || cp.n() != n || cp.m() != m) {
    throw DimensionError("evaluate_theta: inconsistent dimensions");
  }
  const Matrix f = a + b * theta.k_gain;
  const double rho = spectral_radius(f);
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "evaluate_theta: closed loop A + B K is unstable (rho = " << rho << ")";
    throw InstabilityError(os.str(), rho);
  }
  const Vector c = b * theta.l_ff;
  const Vector rl = cp.r_mat * theta.l_ff;
  const Matrix weight = cp.q_mat + theta.k_gain.transpose() * cp.r_mat * theta.k_gain;
  PolicyEvaluation ev = detail::stationary_evaluation(f, c, weight, theta.k_gain.transpose() * rl,
                                                      theta.l_ff.dot(rl), cp);
  const Matrix bp = b.transpose() * ev.p_v;
  ev.e_v = cp.r_mat * theta.k_gain + bp * f;
  ev.g_cap = b.transpose() * ev.g_xi + rl + bp * c;
  return ev;
}

/// Gradient of the model-based cost in K and l.
inline GainGradient gradient_theta(const GainPolicy& theta, const Matrix& a_hat, const Matrix& b_hat,
                                   const CostParams& cp) {
  const Matrix g = evaluate_theta(theta, a_hat, b_hat, cp).gradient();
  const Eigen::Index n = a_hat.rows();
  return {g.leftCols(n), g.col(n)};
}

}  // namespace deepo
