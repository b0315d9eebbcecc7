#include <gtest/gtest.h>

#include <cmath>

#include "deepo/opt.hpp"
#include "test_support.hpp"

using namespace deepo;

namespace {

IterateTrace synthetic_trace(const std::vector<double>& gaps) {
  IterateTrace trace;
  for (std::size_t t = 0; t < gaps.size(); ++t) {
    IterateRecord rec;
    rec.iter = static_cast<long>(t);
    rec.cost_gap = gaps[t];
    trace.records.push_back(rec);
  }
  return trace;
}

StepConfig fixed_iters(double eta, long iters) {
  StepConfig sc;
  sc.eta = eta;
  sc.max_iters = iters;
  sc.grad_tol = 0.0;
  return sc;
}

}  // namespace

TEST(ComputeM, FactorsAsGramOfProjectedInputs) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const LinearSystem sys = generate_system(4, 2, seed, 0.8);
    const DataMatrices dm = build_data_matrices(collect_data(sys, 10, seed + 500, false));
    const Matrix nmat = dm.u0_bar * projector_nullspace(dm.x0_bar);
    const MMatrix m = compute_m(dm);
    EXPECT_LE((m.m_mat - nmat * nmat.transpose()).norm(), 1e-12 * std::max(1.0, m.m_mat.norm()));
    EXPECT_GT(m.min_eig, 0.0);
  }
}

TEST(IndirectOptimal, ZeroSetpointHasNoFeedforward) {
  const testkit::BenchmarkSetup s;
  CostParams cp = s.cp;
  cp.delta.setZero();
  EXPECT_LE(indirect_optimal(s.sys.a, s.sys.b, cp).l_hat.norm(), 1e-15);
}

TEST(IndirectOptimal, LinearInSetpoint) {
  const testkit::BenchmarkSetup s;
  CostParams cp = s.cp;
  const Vector l1 = indirect_optimal(s.sys.a, s.sys.b, cp).l_hat;
  cp.delta *= 3.0;
  EXPECT_LE((indirect_optimal(s.sys.a, s.sys.b, cp).l_hat - 3.0 * l1).norm(), 1e-12);
}

TEST(IndirectOptimal, StationaryOnRandomModels) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const testkit::RandomProblem p = testkit::random_problem(5, 2, seed);
    const IndirectOptimum opt = indirect_optimal(p.sys.a, p.sys.b, p.cp);
    EXPECT_LE(gradient_theta(opt.policy(), p.sys.a, p.sys.b, p.cp).norm(), 1e-8);
    EXPECT_LE(dare_residual(p.sys.a, p.sys.b, p.cp.q_mat, p.cp.r_mat, opt.p_hat), 1e-10);
  }
}

TEST(IndirectOptimal, OppositeFeedforwardSignIsNotStationary) {
  // Flipping the sign of the feedforward term leaves a large gradient, which
  // pins down the sign convention used by indirect_optimal.
  const testkit::BenchmarkSetup s;
  const IndirectOptimum opt = indirect_optimal(s.sys.a, s.sys.b, s.cp);
  const GainPolicy flipped{opt.k_hat, -opt.l_hat};
  EXPECT_GT(gradient_theta(flipped, s.sys.a, s.sys.b, s.cp).norm(), 1e-2);
}

TEST(IndirectOptimal, NoiselessDataRecoversTrueOptimum) {
  const testkit::BenchmarkSetup s;
  const CeReference ref = ce_reference(s.dm, s.cp);
  const IndirectOptimum truth = indirect_optimal(s.sys.a, s.sys.b, s.cp);
  EXPECT_LE((ref.indirect.k_hat - truth.k_hat).norm(), 1e-8);
  EXPECT_LE((ref.indirect.l_hat - truth.l_hat).norm(), 1e-8);
}

TEST(IndirectOptimal, GlobalMinimumAmongStabilizingGains) {
  const testkit::BenchmarkSetup s;
  const IndirectOptimum opt = indirect_optimal(s.sys.a, s.sys.b, s.cp);
  const double best = evaluate_theta(opt.policy(), s.sys.a, s.sys.b, s.cp).cost;
  NormalRng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const GainPolicy theta = testkit::random_stabilizing_policy(rng, s.sys.a, s.sys.b, opt.k_hat, 0.2);
    EXPECT_GE(testkit::series_cost(theta, s.sys.a, s.sys.b, s.cp), best - 1e-10);
  }
}

TEST(DeepoStep, EquivalentToPreconditionedModelStep) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const testkit::RandomProblem p = testkit::random_problem(4, 2, seed);
    const LsModel ls = identify_ls(p.dm);
    const MMatrix m = compute_m(p.dm);
    NormalRng rng(seed + 3);
    for (int trial = 0; trial < 5; ++trial) {
      const GainPolicy theta =
          testkit::random_stabilizing_policy(rng, ls.a_hat, ls.b_hat, Matrix::Zero(2, 4));
      const CovariancePolicy xi = lift_policy(theta, p.dm);
      const GainPolicy model = model_po_step(recover_policy(xi, p.dm), m.m_mat, ls.a_hat, ls.b_hat, p.cp, 1e-3);
      const GainPolicy data = recover_policy(deepo_step(xi, p.dm, p.cp, 1e-3).next, p.dm);
      EXPECT_LE((data.k_gain - model.k_gain).norm(), 1e-10);
      EXPECT_LE((data.l_ff - model.l_ff).norm(), 1e-10);
    }
  }
}

TEST(DeepoStep, PreservesEqualityConstraints) {
  const testkit::BenchmarkSetup s;
  const StepResult r = deepo_step(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm, s.cp, 0.02);
  EXPECT_TRUE(r.stable);
  const FeasibilityReport rep = check_feasible(r.next, s.dm);
  EXPECT_LE(rep.v_residual, 1e-12);
  EXPECT_LE(rep.h_residual, 1e-12);
}

TEST(DeepoStep, OverstepIsFlagged) {
  const testkit::BenchmarkSetup s;
  const StepResult r = deepo_step(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm, s.cp, 10.0);
  EXPECT_FALSE(r.stable);
  EXPECT_GE(r.rho, 1.0);
}

TEST(DeepoStep, OptimumIsFixedPoint) {
  const testkit::BenchmarkSetup s;
  const CeReference ref = ce_reference(s.dm, s.cp);
  for (double eta : {1e-3, 0.02, 0.5, 1.0}) {
    const StepResult r = deepo_step(ref.xi_star, s.dm, s.cp, eta);
    EXPECT_LE((r.next.stacked() - ref.xi_star.stacked()).norm(), 1e-9) << "eta " << eta;
  }
}

TEST(RunDeepo, BenchmarkSetupConverges) {
  const testkit::BenchmarkSetup s;
  const IterateTrace trace = run_deepo(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm, s.cp, StepConfig{});
  ASSERT_NE(trace.status, RunStatus::infeasible) << trace.message;
  const double scale = 1.0 + trace.reference.xi_star.stacked().norm();
  EXPECT_LE(trace.records.back().policy_error, 1e-6 * scale);
  EXPECT_EQ(trace.cost_increases, 0);
  for (std::size_t i = 1; i < trace.records.size(); ++i) {
    EXPECT_LE(trace.records[i].cost_gap, trace.records[i - 1].cost_gap + kCostGapSlack);
  }
  for (const IterateRecord& rec : trace.records) {
    EXPECT_LT(rec.rho, 1.0);
    EXPECT_LE(rec.v_residual, 1e-10);
    EXPECT_LE(rec.h_residual, 1e-10);
  }
}

TEST(RunDeepo, ZeroIterationsRecordsInitialPoint) {
  const testkit::BenchmarkSetup s;
  const CovariancePolicy xi0 = lift_policy(GainPolicy::zero(4, 2), s.dm);
  const IterateTrace trace = run_deepo(xi0, s.dm, s.cp, fixed_iters(0.02, 0));
  ASSERT_EQ(trace.records.size(), 1u);
  EXPECT_EQ(trace.records[0].iter, 0);
  EXPECT_EQ(trace.records[0].cost, evaluate_xi(xi0, s.dm, s.cp).cost);
  EXPECT_EQ(trace.iterations, 0);
  EXPECT_EQ(trace.status, RunStatus::max_iters);
}

TEST(RunDeepo, RecordEveryKeepsLastIterate) {
  const testkit::BenchmarkSetup s;
  StepConfig sc = fixed_iters(0.02, 25);
  sc.record_every = 10;
  const IterateTrace trace = run_deepo(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm, s.cp, sc);
  ASSERT_EQ(trace.records.size(), 4u);
  EXPECT_EQ(trace.records[2].iter, 20);
  EXPECT_EQ(trace.records[3].iter, 25);
}

TEST(RunDeepo, LargeStepReportsInstability) {
  const testkit::BenchmarkSetup s;
  const IterateTrace trace =
      run_deepo(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm, s.cp, fixed_iters(10.0, 100));
  EXPECT_EQ(trace.status, RunStatus::infeasible);
  ASSERT_TRUE(trace.failed_iteration.has_value());
  EXPECT_EQ(*trace.failed_iteration, 1);
  EXPECT_FALSE(trace.message.empty());
}

TEST(RunDeepo, BacktrackingRecoversFromLargeStep) {
  const testkit::BenchmarkSetup s;
  StepConfig sc = fixed_iters(10.0, 200);
  sc.backtracking = true;
  const IterateTrace trace = run_deepo(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm, s.cp, sc);
  EXPECT_NE(trace.status, RunStatus::infeasible);
  EXPECT_LT(trace.final_eta, 10.0);
  EXPECT_EQ(trace.cost_increases, 0);
  EXPECT_LT(trace.records.back().cost_gap, trace.records.front().cost_gap);
}

TEST(RunDeepo, StartsAtOptimumAndStops) {
  const testkit::BenchmarkSetup s;
  const CeReference ref = ce_reference(s.dm, s.cp);
  const IterateTrace trace = run_deepo(ref.xi_star, s.dm, s.cp, StepConfig{});
  EXPECT_EQ(trace.status, RunStatus::converged);
  EXPECT_EQ(trace.iterations, 0);
  EXPECT_LE(trace.records.front().grad_norm, 1e-8);
}

TEST(RunDeepo, InfeasibleStartThrows) {
  const testkit::BenchmarkSetup s;
  CovariancePolicy xi = lift_policy(GainPolicy::zero(4, 2), s.dm);
  xi.v_mat(0, 0) += 1e-3;
  EXPECT_THROW(run_deepo(xi, s.dm, s.cp, StepConfig{}), FeasibilityError);
}

TEST(RunDeepo, BadConfigThrows) {
  const testkit::BenchmarkSetup s;
  const CovariancePolicy xi = lift_policy(GainPolicy::zero(4, 2), s.dm);
  EXPECT_THROW(run_deepo(xi, s.dm, s.cp, fixed_iters(0.0, 10)), InputError);
  EXPECT_THROW(run_deepo(xi, s.dm, s.cp, fixed_iters(0.1, -1)), InputError);
}

TEST(RunDeepo, SmallerStepContractsMoreSlowly) {
  const testkit::BenchmarkSetup s;
  const CovariancePolicy xi0 = lift_policy(GainPolicy::zero(4, 2), s.dm);
  const RateFit full = fit_convergence_rate(run_deepo(xi0, s.dm, s.cp, fixed_iters(0.02, 1500)), 0.05);
  const RateFit half = fit_convergence_rate(run_deepo(xi0, s.dm, s.cp, fixed_iters(0.01, 1500)), 0.05);
  EXPECT_LT(full.rate, 1.0);
  EXPECT_GT(half.rate, full.rate);
}

TEST(RunDeepo, Deterministic) {
  const testkit::BenchmarkSetup s;
  const CovariancePolicy xi0 = lift_policy(GainPolicy::zero(4, 2), s.dm);
  const IterateTrace a = run_deepo(xi0, s.dm, s.cp, fixed_iters(0.02, 50));
  const IterateTrace b = run_deepo(xi0, s.dm, s.cp, fixed_iters(0.02, 50));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].cost, b.records[i].cost);
}

TEST(FitRate, GeometricTrace) {
  std::vector<double> gaps;
  for (int t = 0; t < 60; ++t) gaps.push_back(std::pow(0.5, t));
  const RateFit fit = fit_convergence_rate(synthetic_trace(gaps), 0.0, 0.0);
  EXPECT_NEAR(fit.rate, 0.5, 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_EQ(fit.points, 60u);
}

TEST(FitRate, BurnInSkipsPrefix) {
  std::vector<double> gaps;
  for (int t = 0; t < 100; ++t) gaps.push_back(t < 10 ? 1e3 : std::pow(0.9, t));
  const RateFit fit = fit_convergence_rate(synthetic_trace(gaps), 0.1, 0.0);
  EXPECT_NEAR(fit.rate, 0.9, 1e-12);
}

TEST(FitRate, UnderflowUsesPrefix) {
  std::vector<double> gaps;
  for (int t = 0; t < 40; ++t) gaps.push_back(t < 30 ? std::pow(0.5, t) : 0.0);
  const RateFit fit = fit_convergence_rate(synthetic_trace(gaps), 0.0, 0.0);
  EXPECT_EQ(fit.points, 30u);
  EXPECT_NEAR(fit.rate, 0.5, 1e-12);
}

TEST(FitRate, DegenerateInputs) {
  EXPECT_THROW(fit_convergence_rate(synthetic_trace(std::vector<double>(50, 1.0)), 0.0, 0.0), FitError);
  EXPECT_THROW(fit_convergence_rate(synthetic_trace({1.0, 0.5, 0.25}), 0.0, 0.0), FitError);
  std::vector<double> growing;
  for (int t = 0; t < 20; ++t) growing.push_back(std::pow(1.1, t));
  EXPECT_THROW(fit_convergence_rate(synthetic_trace(growing), 0.0, 0.0), FitError);
  EXPECT_THROW(fit_convergence_rate(IterateTrace{}, 0.0), FitError);
}
