#pragma once

#include "deepo/matops.hpp"

namespace deepo {

/// Affine state-feedback policy u = K x + l.
struct GainPolicy {
  Matrix k_gain;  // m x n
  Vector l_ff;    // m

  Eigen::Index n() const { return k_gain.cols(); }
  Eigen::Index m() const { return k_gain.rows(); }

  bool is_finite() const { return k_gain.allFinite() && l_ff.allFinite(); }

  static GainPolicy zero(Eigen::Index n, Eigen::Index m) {
    return {Matrix::Zero(m, n), Vector::Zero(m)};
  }
};

/// Covariance-parameterized policy xi = [V h], linked to a gain policy by
/// Lambda V = [K; I] and Lambda h = [l; 0].
struct CovariancePolicy {
  Matrix v_mat;  // (m + n) x n
  Vector h_vec;  // m + n

  Eigen::Index n() const { return v_mat.cols(); }
  Eigen::Index dim() const { return v_mat.rows(); }

  /// [V h] as a single (m + n) x (n + 1) matrix.
  Matrix stacked() const {
    Matrix out(v_mat.rows(), v_mat.cols() + 1);
    out << v_mat, h_vec;
    return out;
  }

  static CovariancePolicy from_stacked(const Matrix& xi) {
    return {xi.leftCols(xi.cols() - 1), xi.col(xi.cols() - 1)};
  }
};

}  // namespace deepo
