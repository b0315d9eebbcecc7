#pragma once

// Projected policy-gradient iteration on covariance policies, its model-based
// counterpart, the certainty-equivalence optimum, and trace analytics.

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deepo/errors.hpp"
#include "deepo/lqt.hpp"
#include "deepo/matops.hpp"
#include "deepo/param.hpp"
#include "deepo/policy.hpp"

namespace deepo {

/// Round-off slack allowed when comparing costs against the optimum.
inline constexpr double kCostGapSlack = 1e-9;
/// Cost gaps at or below kGapFloorRel * max(1, |J*|) are treated as round-off.
inline constexpr double kGapFloorRel = 1e-10;

struct MMatrix {
  Matrix m_mat;
  double min_eig = 0.0;
};

struct IndirectOptimum {
  Matrix k_hat;
  Vector l_hat;
  Matrix p_hat;

  GainPolicy policy() const { return {k_hat, l_hat}; }
};

/// Certainty-equivalence optimum expressed in both parameterizations.
struct CeReference {
  LsModel model;
  IndirectOptimum indirect;
  CovariancePolicy xi_star;
  double cost = 0.0;
};

struct StepConfig {
  double eta = 0.02;
  long max_iters = 5000;
  double grad_tol = 1e-10;
  long record_every = 1;
  bool backtracking = false;
};

struct IterateRecord {
  long iter = 0;
  double cost = 0.0;
  double cost_gap = 0.0;
  double policy_error = 0.0;
  double grad_norm = 0.0;
  double rho = 0.0;
  double v_residual = 0.0;
  double h_residual = 0.0;
  double eta = 0.0;
};

enum class RunStatus { converged, max_iters, infeasible };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iters: return "max_iters";
    case RunStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

struct IterateTrace {
  std::vector<IterateRecord> records;
  RunStatus status = RunStatus::max_iters;
  long iterations = 0;                  // steps actually taken
  std::optional<long> failed_iteration;  // first iterate that left the stable set
  std::string message;
  long cost_increases = 0;  // steps with J(xi+) > J(xi) + kCostGapSlack
  double final_eta = 0.0;
  CovariancePolicy final_policy;
  CeReference reference;
  std::optional<double> true_optimal_cost;  // filled by callers that know the plant
};

struct StepResult {
  CovariancePolicy next;
  double rho = 0.0;
  bool stable = false;
};

struct RateFit {
  double rate = 0.0;  // per-iteration contraction exp(slope)
  double slope = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

/// M = U0_bar (I - X0_bar^+ X0_bar) U0_bar', the data-dependent preconditioner
/// linking the projected iteration to gradient descent on (K, l).
inline MMatrix compute_m(const DataMatrices& dm) {
  const Matrix proj = projector_nullspace(dm.x0_bar);
  MMatrix out;
  out.m_mat = detail::symmetrize(dm.u0_bar * proj * dm.u0_bar.transpose());
  const Vector ev =
      Eigen::SelfAdjointEigenSolver<Matrix>(out.m_mat, Eigen::EigenvaluesOnly).eigenvalues();
  out.min_eig = ev(0);
  const double top = ev(ev.size() - 1);
  if (!(out.min_eig > 1e-10 * top) || !(top > 0.0)) {
    std::ostringstream os;
    os << "compute_m: M is numerically singular (min eigenvalue " << out.min_eig << ")";
    throw DegeneracyError(os.str());
  }
  return out;
}

/// Optimal tracking policy for the model (A_hat, B_hat):
///   K = -(B'PB + R)^{-1} B'PA,  l = (B'PB + R)^{-1} B' (I - A - BK)^{-T} Q delta.
inline IndirectOptimum indirect_optimal(const Matrix& a_hat, const Matrix& b_hat,
                                        const CostParams& cp) {
  IndirectOptimum out;
  out.p_hat = solve_dare(a_hat, b_hat, cp.q_mat, cp.r_mat);
  out.k_hat = lqr_gain(a_hat, b_hat, cp.r_mat, out.p_hat);
  const Eigen::Index n = a_hat.rows();
  const Matrix resolvent = Matrix::Identity(n, n) - a_hat - b_hat * out.k_hat;
  const Eigen::PartialPivLU<Matrix> lu(resolvent);
  if (!(lu.rcond() > detail::kMinResolventRcond)) {
    throw TrackingError("indirect_optimal: I - A - B K is singular");
  }
  const Vector z = lu.transpose().solve(cp.q_mat * cp.delta);
  const Matrix s = cp.r_mat + b_hat.transpose() * out.p_hat * b_hat;
  out.l_hat = s.llt().solve(b_hat.transpose() * z);
  return out;
}

inline CeReference ce_reference(const DataMatrices& dm, const CostParams& cp) {
  CeReference ref;
  ref.model = identify_ls(dm);
  ref.indirect = indirect_optimal(ref.model.a_hat, ref.model.b_hat, cp);
  ref.xi_star = lift_policy(ref.indirect.policy(), dm);
  ref.cost = evaluate_xi(ref.xi_star, dm, cp).cost;
  return ref;
}

/// xi+ = xi - eta * Pi * grad, with Pi the null-space projector of X0_bar.
inline StepResult deepo_step(const CovariancePolicy& xi, const DataMatrices& dm,
                             const CostParams& cp, double eta, const Matrix& projector) {
  const Matrix grad = gradient_xi(xi, dm, cp);
  StepResult out;
  out.next = CovariancePolicy::from_stacked(xi.stacked() - eta * (projector * grad));
  out.rho = spectral_radius(dm.x1_bar * out.next.v_mat);
  out.stable = out.rho < 1.0;
  return out;
}

inline StepResult deepo_step(const CovariancePolicy& xi, const DataMatrices& dm,
                             const CostParams& cp, double eta) {
  return deepo_step(xi, dm, cp, eta, projector_nullspace(dm.x0_bar));
}

/// theta+ = theta - eta * M * grad_theta J.
inline GainPolicy model_po_step(const GainPolicy& theta, const Matrix& m_mat, const Matrix& a_hat,
                                const Matrix& b_hat, const CostParams& cp, double eta) {
  const GainGradient g = gradient_theta(theta, a_hat, b_hat, cp);
  return {theta.k_gain - eta * m_mat * g.k_grad, theta.l_ff - eta * m_mat * g.l_grad};
}

/// Runs the projected gradient iteration from xi0.
///
/// Every iterate xi^0 .. xi^N is evaluated; records are kept every
/// record_every iterations plus the last one. The run stops when the projected
/// gradient norm drops to grad_tol (checked before stepping), after max_iters
/// steps, or when a step leaves the stable set. With backtracking on, eta is
/// halved on instability or cost increase and never grown again.
inline IterateTrace run_deepo(const CovariancePolicy& xi0, const DataMatrices& dm,
                              const CostParams& cp, const StepConfig& sc) {
  if (!(sc.eta > 0.0)) throw InputError("run_deepo: eta must be positive");
  if (sc.max_iters < 0 || sc.record_every < 1) {
    throw InputError("run_deepo: max_iters must be >= 0 and record_every >= 1");
  }
  cp.validate();
  const FeasibilityReport start = check_feasible(xi0, dm);
  if (!start.in_set) {
    std::ostringstream os;
    os << "run_deepo: initial policy is not feasible (||X0 V - I|| = " << start.v_residual
       << ", ||X0 h|| = " << start.h_residual << ", rho = " << start.rho << ")";
    throw FeasibilityError(os.str(), start.v_residual, start.h_residual);
  }

  IterateTrace trace;
  trace.reference = ce_reference(dm, cp);
  const Matrix projector = projector_nullspace(dm.x0_bar);
  const Matrix xi_star = trace.reference.xi_star.stacked();
  const Matrix eye = Matrix::Identity(dm.n(), dm.n());

  CovariancePolicy xi = xi0;
  PolicyEvaluation ev = evaluate_xi(xi, dm, cp);
  double eta = sc.eta;

  auto make_record = [&](long t, double grad_norm) {
    IterateRecord rec;
    rec.iter = t;
    rec.cost = ev.cost;
    rec.cost_gap = ev.cost - trace.reference.cost;
    rec.policy_error = (xi.stacked() - xi_star).norm();
    rec.grad_norm = grad_norm;
    rec.rho = ev.rho;
    rec.v_residual = (dm.x0_bar * xi.v_mat - eye).norm();
    rec.h_residual = (dm.x0_bar * xi.h_vec).norm();
    rec.eta = eta;
    return rec;
  };

  for (long t = 0;; ++t) {
    const Matrix direction = projector * ev.gradient();
    const double grad_norm = direction.norm();
    const bool done = grad_norm <= sc.grad_tol || t >= sc.max_iters;
    if (done || t % sc.record_every == 0) trace.records.push_back(make_record(t, grad_norm));
    if (done) {
      trace.status = grad_norm <= sc.grad_tol ? RunStatus::converged : RunStatus::max_iters;
      break;
    }

    std::optional<CovariancePolicy> accepted;
    std::optional<PolicyEvaluation> accepted_ev;
    double failed_rho = 0.0;
    while (!accepted) {
      CovariancePolicy cand = CovariancePolicy::from_stacked(xi.stacked() - eta * direction);
      std::optional<PolicyEvaluation> cand_ev;
      try {
        cand_ev = evaluate_xi(cand, dm, cp);
      } catch (const FeasibilityError&) {
      } catch (const ConditioningError&) {
      } catch (const InstabilityError&) {
      }
      if (cand_ev && !(sc.backtracking && cand_ev->cost > ev.cost + kCostGapSlack)) {
        accepted = std::move(cand);
        accepted_ev = std::move(cand_ev);
      } else if (sc.backtracking && eta > 1e-16 * sc.eta) {
        eta *= 0.5;
      } else {
        failed_rho = spectral_radius(dm.x1_bar * cand.v_mat);
        break;
      }
    }
    if (!accepted) {
      trace.status = RunStatus::infeasible;
      trace.failed_iteration = t + 1;
      std::ostringstream os;
      os << "iterate " << t + 1 << " left the stable set (rho(X1_bar V) = " << failed_rho << ")";
      trace.message = os.str();
      break;
    }
    if (accepted_ev->cost > ev.cost + kCostGapSlack) ++trace.cost_increases;
    xi = std::move(*accepted);
    ev = std::move(*accepted_ev);
    trace.iterations = t + 1;
  }
  trace.final_policy = xi;
  trace.final_eta = eta;
  return trace;
}

/// Least-squares fit of log(gap) against iteration.
inline RateFit fit_log_linear(const std::vector<double>& iters, const std::vector<double>& gaps) {
  const std::size_t k = iters.size();
  if (k < 10 || gaps.size() != k) throw FitError("fit_convergence_rate: fewer than 10 usable points");
  double mx = 0.0, my = 0.0;
  std::vector<double> ly(k);
  for (std::size_t i = 0; i < k; ++i) {
    ly[i] = std::log(gaps[i]);
    mx += iters[i];
    my += ly[i];
  }
  mx /= static_cast<double>(k);
  my /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (iters[i] - mx) * (iters[i] - mx);
    sxy += (iters[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw FitError("fit_convergence_rate: degenerate (constant) trace");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.rate = std::exp(fit.slope);
  fit.r_squared = (sxy * sxy) / (sxx * syy);
  fit.points = k;
  if (!(fit.slope < 0.0)) throw FitError("fit_convergence_rate: cost gap does not contract");
  return fit;
}

/// Fits the per-iteration contraction factor of the cost gap.
///
/// Records before burn_in_frac of the run are skipped; the fit then uses the
/// prefix of records whose gap stays above the round-off floor
/// kGapFloorRel * max(1, |J*|) (or `gap_floor` when given).
inline RateFit fit_convergence_rate(const IterateTrace& trace, double burn_in_frac,
                                    std::optional<double> gap_floor = std::nullopt) {
  if (trace.records.empty()) throw FitError("fit_convergence_rate: empty trace");
  const double floor =
      gap_floor.value_or(kGapFloorRel * std::max(1.0, std::abs(trace.reference.cost)));
  const double last = static_cast<double>(trace.records.back().iter);
  const double start = burn_in_frac * last;
  std::vector<double> iters;
  std::vector<double> gaps;
  for (const IterateRecord& rec : trace.records) {
    if (static_cast<double>(rec.iter) < start) continue;
    if (!(rec.cost_gap > floor)) break;
    iters.push_back(static_cast<double>(rec.iter));
    gaps.push_back(rec.cost_gap);
  }
  return fit_log_linear(iters, gaps);
}

}  // namespace deepo
