#pragma once

// Ground-truth LTI plant x+ = A x + B u + w, used to generate offline data and
// to check closed-form costs by simulation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "deepo/errors.hpp"
#include "deepo/matops.hpp"
#include "deepo/policy.hpp"
#include "deepo/random.hpp"

namespace deepo {

struct LinearSystem {
  Matrix a;      // n x n
  Matrix b;      // n x m
  Matrix w_cov;  // n x n, symmetric PSD

  Eigen::Index n() const { return a.rows(); }
  Eigen::Index m() const { return b.cols(); }
};

/// T-sample offline dataset. Column t of x0_seq, u0_seq, x1_seq is (x_t, u_t, x_{t+1}).
struct OfflineDataset {
  Matrix x0_seq;                 // n x T
  Matrix u0_seq;                 // m x T
  Matrix x1_seq;                 // n x T
  std::optional<Matrix> w0_seq;  // n x T, recorded when noise was injected

  Eigen::Index n() const { return x0_seq.rows(); }
  Eigen::Index m() const { return u0_seq.rows(); }
  Eigen::Index t_len() const { return x0_seq.cols(); }

  /// D0 = [U0; X0].
  Matrix stacked_d0() const {
    Matrix d0(m() + n(), t_len());
    d0 << u0_seq, x0_seq;
    return d0;
  }
};

struct RolloutResult {
  Matrix states;  // n x (H + 1)
  Matrix inputs;  // m x H
  double average_cost = 0.0;
};

struct PeReport {
  bool is_pe = false;
  double min_singular_value = 0.0;
};

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_err = 0.0;
};

/// Controllability matrix [B, AB, ..., A^{n-1} B].
inline Matrix controllability_matrix(const Matrix& a, const Matrix& b) {
  const Eigen::Index n = a.rows();
  Matrix ctrb(n, n * b.cols());
  Matrix block = b;
  for (Eigen::Index k = 0; k < n; ++k) {
    ctrb.middleCols(k * b.cols(), b.cols()) = block;
    block = a * block;
  }
  return ctrb;
}

inline bool is_controllable(const Matrix& a, const Matrix& b) {
  return numerical_rank(controllability_matrix(a, b)) == a.rows();
}

/// The 4-state, 2-input benchmark plant (entries given to three decimals).
inline LinearSystem benchmark_system() {
  LinearSystem sys;
  sys.a.resize(4, 4);
  sys.a << -0.229, 0.247, -0.511, 0.493,
            0.846, 0.159,  0.722, 0.529,
           -0.018, 0.070,  0.300, 0.758,
            0.247, 0.546, -0.511, -0.176;
  sys.b.resize(4, 2);
  sys.b << -0.631,  0.938,
            0.262, -0.796,
            0.461, -0.180,
            0.774,  0.112;
  sys.w_cov = Matrix::Zero(4, 4);
  return sys;
}

/// Random controllable system with standard-normal entries and A rescaled to
/// spectral radius target_rho. A is drawn before B, both column by column.
/// On an uncontrollable draw the seed is incremented and the draw repeated.
inline LinearSystem generate_system(Eigen::Index n, Eigen::Index m, std::uint64_t seed,
                                    double target_rho, int max_retries = 100) {
  if (n < 1 || m < 1) throw InputError("generate_system: n and m must be positive");
  if (!(target_rho > 0.0 && target_rho < 1.0)) {
    throw InputError("generate_system: target_rho must lie in (0, 1)");
  }
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    NormalRng rng(seed + static_cast<std::uint64_t>(attempt));
    LinearSystem sys;
    sys.a = rng.normal_matrix(n, n);
    sys.b = rng.normal_matrix(n, m);
    const double rho = spectral_radius(sys.a);
    if (!(rho > 0.0)) continue;
    sys.a *= target_rho / rho;
    sys.w_cov = Matrix::Zero(n, n);
    if (is_controllable(sys.a, sys.b)) return sys;
  }
  throw GenerationError("generate_system: no controllable system found within the retry budget");
}

namespace detail {

/// L with L L' = cov, from the symmetric eigendecomposition (cov may be singular).
inline Matrix noise_factor(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(cov));
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

}  // namespace detail

/// Simulates T steps from a standard-normal x0 with i.i.d. standard-normal
/// inputs. Draw order: x0, then u_0 .. u_{T-1}, then (if noise_on) the
/// standard normals behind w_0 .. w_{T-1}; switching noise on therefore does
/// not change x0 or the inputs.
inline OfflineDataset collect_data(const LinearSystem& sys, Eigen::Index t_len, std::uint64_t seed,
                                   bool noise_on) {
  const Eigen::Index n = sys.n();
  const Eigen::Index m = sys.m();
  if (t_len < n + m) {
    std::ostringstream os;
    os << "collect_data: T = " << t_len << " is shorter than n + m = " << n + m;
    throw DataLengthError(os.str());
  }
  NormalRng rng(seed);
  const Vector x_start = rng.normal_vector(n);
  OfflineDataset ds;
  ds.u0_seq = rng.normal_matrix(m, t_len);
  Matrix noise = Matrix::Zero(n, t_len);
  if (noise_on) noise = detail::noise_factor(sys.w_cov) * rng.normal_matrix(n, t_len);

  ds.x0_seq.resize(n, t_len);
  ds.x1_seq.resize(n, t_len);
  Vector x = x_start;
  for (Eigen::Index t = 0; t < t_len; ++t) {
    ds.x0_seq.col(t) = x;
    x = sys.a * x + sys.b * ds.u0_seq.col(t) + noise.col(t);
    ds.x1_seq.col(t) = x;
  }
  if (noise_on) ds.w0_seq = noise;
  return ds;
}

/// Persistent excitation: D0 = [U0; X0] has full row rank.
inline PeReport check_pe(const OfflineDataset& ds) {
  const Matrix d0 = ds.stacked_d0();
  PeReport rep;
  rep.min_singular_value = min_singular_value(d0);
  rep.is_pe = d0.rows() <= d0.cols() && numerical_rank(d0) == d0.rows();
  return rep;
}

inline constexpr double kDivergenceGuard = 1e12;

/// Simulates x+ = A x + B (K x + l) + w for `horizon` steps and returns the
/// time-averaged stage cost (x - delta)' Q (x - delta) + u' R u over steps
/// burn_in .. horizon-1.
inline RolloutResult rollout_policy(const LinearSystem& sys, const GainPolicy& policy,
                                    const Vector& x_init, Eigen::Index horizon, const Matrix& q,
                                    const Matrix& r, const Vector& delta, std::uint64_t seed,
                                    bool noise_on, Eigen::Index burn_in = 0) {
  const Eigen::Index n = sys.n();
  const Eigen::Index m = sys.m();
  if (policy.k_gain.rows() != m || policy.k_gain.cols() != n || policy.l_ff.size() != m ||
      x_init.size() != n || delta.size() != n || q.rows() != n || r.rows() != m) {
    throw DimensionError("rollout_policy: inconsistent dimensions");
  }
  if (horizon < 1 || burn_in < 0 || burn_in >= horizon) {
    throw InputError("rollout_policy: need 0 <= burn_in < horizon");
  }
  const Matrix closed = sys.a + sys.b * policy.k_gain;
  const double rho = spectral_radius(closed);
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "rollout_policy: closed loop is unstable (rho = " << rho << ")";
    throw DivergenceError(os.str(), 0);
  }

  NormalRng rng(seed);
  const Matrix factor = noise_on ? detail::noise_factor(sys.w_cov) : Matrix::Zero(n, n);
  RolloutResult out;
  out.states.resize(n, horizon + 1);
  out.inputs.resize(m, horizon);
  out.states.col(0) = x_init;
  double total = 0.0;
  for (Eigen::Index t = 0; t < horizon; ++t) {
    const Vector x = out.states.col(t);
    const Vector u = policy.k_gain * x + policy.l_ff;
    out.inputs.col(t) = u;
    if (t >= burn_in) {
      const Vector e = x - delta;
      total += e.dot(q * e) + u.dot(r * u);
    }
    Vector next = sys.a * x + sys.b * u;
    if (noise_on) next += factor * rng.normal_vector(n);
    if (!next.allFinite() || next.norm() > kDivergenceGuard) {
      std::ostringstream os;
      os << "rollout_policy: state norm exceeded " << kDivergenceGuard << " at step " << t + 1;
      throw DivergenceError(os.str(), static_cast<std::size_t>(t + 1));
    }
    out.states.col(t + 1) = next;
  }
  out.average_cost = total / static_cast<double>(horizon - burn_in);
  return out;
}

/// Mean and standard error of the rollout average cost over n_rollouts
/// independent noise realizations. Rollout i uses seed + i, so a single
/// rollout reproduces rollout_policy with the same seed. Rollouts run on
/// worker threads; the reduction is done in rollout order.
inline MonteCarloEstimate monte_carlo_cost(const LinearSystem& sys, const GainPolicy& policy,
                                           const Matrix& q, const Matrix& r, const Vector& delta,
                                           const Vector& x_init, Eigen::Index horizon,
                                           int n_rollouts, std::uint64_t seed,
                                           bool noise_on = true, Eigen::Index burn_in = 0) {
  if (n_rollouts < 1) throw InputError("monte_carlo_cost: n_rollouts must be positive");
  std::vector<double> costs(static_cast<std::size_t>(n_rollouts));
  std::vector<std::exception_ptr> failures(costs.size());

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(n_rollouts));
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < costs.size(); i += workers) {
          try {
            costs[i] = rollout_policy(sys, policy, x_init, horizon, q, r, delta, seed + i,
                                      noise_on, burn_in)
                           .average_cost;
          } catch (...) {
            failures[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  MonteCarloEstimate est;
  for (double c : costs) est.mean += c;
  est.mean /= static_cast<double>(costs.size());
  if (costs.size() > 1) {
    double ss = 0.0;
    for (double c : costs) ss += (c - est.mean) * (c - est.mean);
    const double var = ss / static_cast<double>(costs.size() - 1);
    est.std_err = std::sqrt(var / static_cast<double>(costs.size()));
  }
  return est;
}

}  // namespace deepo
