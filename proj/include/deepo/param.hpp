#pragma once

// Covariance parameterization of affine policies built from offline data.

#include <cmath>
#include <optional>
#include <sstream>

#include "deepo/errors.hpp"
#include "deepo/matops.hpp"
#include "deepo/plant.hpp"
#include "deepo/policy.hpp"

namespace deepo {

/// Absolute Frobenius tolerance on ||X0_bar V - I|| and ||X0_bar h||.
inline constexpr double kFeasTol = 1e-8;
/// Condition number of Lambda above which lifting is refused.
inline constexpr double kMaxLambdaCond = 1e12;

/// Sample covariance Lambda = D0 D0' / T and the averaged data matrices.
struct DataMatrices {
  Matrix lambda;                 // (m + n) x (m + n)
  Matrix x0_bar;                 // n x (m + n)
  Matrix u0_bar;                 // m x (m + n)
  Matrix x1_bar;                 // n x (m + n)
  std::optional<Matrix> w0_bar;  // n x (m + n)

  Eigen::Index n() const { return x0_bar.rows(); }
  Eigen::Index m() const { return u0_bar.rows(); }
};

struct FeasibilityReport {
  bool in_set = false;
  double v_residual = 0.0;  // ||X0_bar V - I||_F
  double h_residual = 0.0;  // ||X0_bar h||_F
  double rho = 0.0;         // rho(X1_bar V)
};

/// Least-squares model estimate.
struct LsModel {
  Matrix a_hat;
  Matrix b_hat;
};

inline DataMatrices build_data_matrices(const OfflineDataset& ds) {
  const PeReport pe = check_pe(ds);
  if (!pe.is_pe) {
    std::ostringstream os;
    os << "build_data_matrices: data is not persistently exciting (min singular value of D0 = "
       << pe.min_singular_value << ")";
    throw RankError(os.str(), pe.min_singular_value);
  }
  const double inv_t = 1.0 / static_cast<double>(ds.t_len());
  const Matrix d0t = ds.stacked_d0().transpose();
  DataMatrices dm;
  dm.x0_bar = inv_t * ds.x0_seq * d0t;
  dm.u0_bar = inv_t * ds.u0_seq * d0t;
  dm.x1_bar = inv_t * ds.x1_seq * d0t;
  dm.lambda.resize(dm.m() + dm.n(), dm.m() + dm.n());
  dm.lambda << dm.u0_bar, dm.x0_bar;
  dm.lambda = detail::symmetrize(dm.lambda);
  if (ds.w0_seq) dm.w0_bar = inv_t * (*ds.w0_seq) * d0t;
  return dm;
}

namespace detail {

inline Eigen::LLT<Matrix> factor_lambda(const DataMatrices& dm) {
  Eigen::LLT<Matrix> llt(dm.lambda);
  if (llt.info() != Eigen::Success) throw ConditioningError("Lambda is not positive definite");
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(dm.lambda, Eigen::EigenvaluesOnly)
                        .eigenvalues();
  const double cond = ev(ev.size() - 1) / ev(0);
  if (!(cond <= kMaxLambdaCond)) {
    std::ostringstream os;
    os << "Lambda is ill-conditioned (condition number " << cond << ")";
    throw ConditioningError(os.str());
  }
  return llt;
}

}  // namespace detail

/// V = Lambda^{-1} [K; I], h = Lambda^{-1} [l; 0].
inline CovariancePolicy lift_policy(const GainPolicy& theta, const DataMatrices& dm) {
  const Eigen::Index n = dm.n();
  const Eigen::Index m = dm.m();
  if (theta.k_gain.rows() != m || theta.k_gain.cols() != n || theta.l_ff.size() != m) {
    throw DimensionError("lift_policy: policy dimensions do not match the data");
  }
  const auto llt = detail::factor_lambda(dm);
  Matrix rhs_v(m + n, n);
  rhs_v << theta.k_gain, Matrix::Identity(n, n);
  Vector rhs_h(m + n);
  rhs_h << theta.l_ff, Vector::Zero(n);
  return {llt.solve(rhs_v), llt.solve(rhs_h)};
}

inline FeasibilityReport check_feasible(const CovariancePolicy& xi, const DataMatrices& dm,
                                        double feas_tol = kFeasTol) {
  FeasibilityReport rep;
  rep.v_residual = (dm.x0_bar * xi.v_mat - Matrix::Identity(dm.n(), dm.n())).norm();
  rep.h_residual = (dm.x0_bar * xi.h_vec).norm();
  rep.rho = spectral_radius(dm.x1_bar * xi.v_mat);
  rep.in_set = rep.v_residual <= feas_tol && rep.h_residual <= feas_tol && rep.rho < 1.0;
  return rep;
}

/// K = U0_bar V, l = U0_bar h for a policy satisfying the equality constraints.
inline GainPolicy recover_policy(const CovariancePolicy& xi, const DataMatrices& dm,
                                 double feas_tol = kFeasTol) {
  if (xi.v_mat.rows() != dm.m() + dm.n() || xi.v_mat.cols() != dm.n() ||
      xi.h_vec.size() != dm.m() + dm.n()) {
    throw DimensionError("recover_policy: policy dimensions do not match the data");
  }
  const double rv = (dm.x0_bar * xi.v_mat - Matrix::Identity(dm.n(), dm.n())).norm();
  const double rh = (dm.x0_bar * xi.h_vec).norm();
  if (rv > feas_tol || rh > feas_tol) {
    std::ostringstream os;
    os << "recover_policy: infeasible policy (||X0 V - I|| = " << rv << ", ||X0 h|| = " << rh
       << ")";
    throw FeasibilityError(os.str(), rv, rh);
  }
  return {dm.u0_bar * xi.v_mat, dm.u0_bar * xi.h_vec};
}

/// [B_hat A_hat] = X1_bar Lambda^{-1}, which equals X1 D0' (D0 D0')^{-1}.
inline LsModel identify_ls(const DataMatrices& dm) {
  Eigen::LLT<Matrix> llt(dm.lambda);
  if (llt.info() != Eigen::Success) throw RankError("identify_ls: Lambda is singular", 0.0);
  const Matrix ba = llt.solve(dm.x1_bar.transpose()).transpose();
  return {ba.rightCols(dm.n()), ba.leftCols(dm.m())};
}

/// Least-squares fit of X1 ~ A X0 + B U0 from raw trajectories.
inline LsModel identify_ls(const OfflineDataset& ds) {
  const PeReport pe = check_pe(ds);
  if (!pe.is_pe) {
    throw RankError("identify_ls: data is not persistently exciting", pe.min_singular_value);
  }
  const Matrix d0 = ds.stacked_d0();
  const Matrix gram = d0 * d0.transpose();
  const Matrix ba = gram.llt().solve(d0 * ds.x1_seq.transpose()).transpose();
  return {ba.rightCols(ds.n()), ba.leftCols(ds.m())};
}

}  // namespace deepo
