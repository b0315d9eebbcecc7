#include <gtest/gtest.h>

#include "deepo/param.hpp"
#include "test_support.hpp"

using namespace deepo;

TEST(DataMatrices, ShapesAndSymmetry) {
  const testkit::BenchmarkSetup s;
  EXPECT_EQ(s.dm.lambda.rows(), 6);
  EXPECT_EQ(s.dm.x0_bar.rows(), 4);
  EXPECT_EQ(s.dm.u0_bar.rows(), 2);
  EXPECT_EQ(s.dm.x1_bar.cols(), 6);
  EXPECT_EQ(s.dm.lambda, s.dm.lambda.transpose());
}

TEST(DataMatrices, LambdaMatchesDirectProduct) {
  const testkit::BenchmarkSetup s;
  const Matrix d0 = s.ds.stacked_d0();
  EXPECT_LE((s.dm.lambda - d0 * d0.transpose() / 10.0).norm(), 1e-13 * s.dm.lambda.norm());
  EXPECT_LE((s.dm.x1_bar - s.ds.x1_seq * d0.transpose() / 10.0).norm(), 1e-15 * s.dm.x1_bar.norm());
}

TEST(DataMatrices, NotExcitingThrows) {
  OfflineDataset ds = collect_data(benchmark_system(), 10, 0, false);
  ds.u0_seq.row(1) = ds.u0_seq.row(0);
  EXPECT_THROW(build_data_matrices(ds), RankError);
}

TEST(DataMatrices, NoiseAverage) {
  LinearSystem sys = benchmark_system();
  sys.w_cov = 0.1 * Matrix::Identity(4, 4);
  const OfflineDataset ds = collect_data(sys, 30, 1, true);
  const DataMatrices dm = build_data_matrices(ds);
  ASSERT_TRUE(dm.w0_bar.has_value());
  // X1_bar = A X0_bar + B U0_bar + W0_bar holds exactly for the noisy data.
  EXPECT_LE((sys.a * dm.x0_bar + sys.b * dm.u0_bar + *dm.w0_bar - dm.x1_bar).norm(), 1e-12);
}

TEST(Lift, ZeroPolicyLayout) {
  const testkit::BenchmarkSetup s;
  const CovariancePolicy xi = lift_policy(GainPolicy::zero(4, 2), s.dm);
  Matrix expected(6, 4);
  expected << Matrix::Zero(2, 4), Matrix::Identity(4, 4);
  EXPECT_LE((s.dm.lambda * xi.v_mat - expected).norm(), 1e-12);
  EXPECT_LE(xi.h_vec.norm(), 1e-15);
}

TEST(Lift, RoundTrip) {
  const testkit::BenchmarkSetup s;
  NormalRng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const GainPolicy theta{rng.normal_matrix(2, 4), rng.normal_vector(2)};
    const CovariancePolicy xi = lift_policy(theta, s.dm);
    const GainPolicy back = recover_policy(xi, s.dm);
    EXPECT_LE((back.k_gain - theta.k_gain).norm(), 1e-10 * (1.0 + theta.k_gain.norm()));
    EXPECT_LE((back.l_ff - theta.l_ff).norm(), 1e-10 * (1.0 + theta.l_ff.norm()));
  }
}

TEST(Lift, DimensionMismatch) {
  const testkit::BenchmarkSetup s;
  EXPECT_THROW(lift_policy(GainPolicy::zero(3, 2), s.dm), DimensionError);
}

TEST(Lift, IllConditionedLambda) {
  OfflineDataset ds = collect_data(benchmark_system(), 10, 0, false);
  ds.u0_seq.row(1) = ds.u0_seq.row(0) + 3e-7 * ds.u0_seq.row(1);
  const DataMatrices dm = build_data_matrices(ds);
  EXPECT_THROW(lift_policy(GainPolicy::zero(4, 2), dm), ConditioningError);
}

TEST(Feasibility, LiftedPolicyIsInSet) {
  const testkit::BenchmarkSetup s;
  const FeasibilityReport rep = check_feasible(lift_policy(GainPolicy::zero(4, 2), s.dm), s.dm);
  EXPECT_TRUE(rep.in_set);
  EXPECT_LE(rep.v_residual, 1e-12);
  EXPECT_NEAR(rep.rho, spectral_radius(s.sys.a), 1e-10);
}

TEST(Feasibility, RecoverRejectsOffSet) {
  const testkit::BenchmarkSetup s;
  CovariancePolicy xi = lift_policy(GainPolicy::zero(4, 2), s.dm);
  xi.h_vec += 1e-3 * Vector::Ones(6);
  EXPECT_FALSE(check_feasible(xi, s.dm).in_set);
  try {
    recover_policy(xi, s.dm);
    FAIL() << "expected FeasibilityError";
  } catch (const FeasibilityError& e) {
    EXPECT_GT(e.h_residual(), 1e-8);
  }
}

TEST(Identify, NoiselessRecoversPlant) {
  const testkit::BenchmarkSetup s;
  const LsModel a = identify_ls(s.dm);
  const LsModel b = identify_ls(s.ds);
  EXPECT_LE((a.a_hat - s.sys.a).norm(), 1e-10);
  EXPECT_LE((a.b_hat - s.sys.b).norm(), 1e-10);
  EXPECT_LE((b.a_hat - s.sys.a).norm(), 1e-10);
  EXPECT_LE((b.b_hat - s.sys.b).norm(), 1e-10);
}

TEST(Identify, DataIdentityHoldsUnderNoise) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LinearSystem sys = generate_system(4, 2, seed, 0.8);
    sys.w_cov = 0.5 * Matrix::Identity(4, 4);
    const DataMatrices dm = build_data_matrices(collect_data(sys, 10, seed, true));
    const LsModel ls = identify_ls(dm);
    EXPECT_LE((ls.a_hat * dm.x0_bar + ls.b_hat * dm.u0_bar - dm.x1_bar).norm(), 1e-12);
    EXPECT_GT((ls.a_hat - sys.a).norm(), 1e-6);
  }
}

TEST(Identify, ClosedLoopIdentities) {
  LinearSystem sys = benchmark_system();
  sys.w_cov = 0.2 * Matrix::Identity(4, 4);
  const DataMatrices dm = build_data_matrices(collect_data(sys, 12, 3, true));
  const LsModel ls = identify_ls(dm);
  NormalRng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const GainPolicy theta{rng.normal_matrix(2, 4), rng.normal_vector(2)};
    const CovariancePolicy xi = lift_policy(theta, dm);
    EXPECT_LE((ls.a_hat + ls.b_hat * theta.k_gain - dm.x1_bar * xi.v_mat).norm(), 1e-10);
    EXPECT_LE((ls.b_hat * theta.l_ff - dm.x1_bar * xi.h_vec).norm(), 1e-10);
  }
}

TEST(Identify, RawRequiresExcitation) {
  OfflineDataset ds = collect_data(benchmark_system(), 10, 0, false);
  ds.x0_seq.setZero();
  EXPECT_THROW(identify_ls(ds), RankError);
}
