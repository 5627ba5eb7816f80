/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ddda/analysis.hpp"
#include "fixtures.hpp"

using namespace ddda;
using namespace ddda::analysis;

TEST(Gronwall, ClosedForms) {
  EXPECT_NEAR(gronwallBound(1.0, std::log(2.0), 0.0, 1), 2.0, 1e-15);
  EXPECT_EQ(gronwallBound(0.0, 0.3, 0.0, 5), 0.0);
  EXPECT_NEAR(gronwallBound(2.0, 0.5, 1.0, 2), 2.0 * std::exp(1.0) + (std::exp(1.0) - 1.0) / 0.5, 1e-13);
}

TEST(Gronwall, RejectsNonPositiveRate) {
  EXPECT_THROW(gronwallBound(1.0, 0.0, 1.0, 3), std::invalid_argument);
  EXPECT_THROW(gronwallBound(1.0, -0.5, 1.0, 3), std::invalid_argument);
  EXPECT_THROW(gronwallBound(1.0, 0.5, -1.0, 3), std::invalid_argument);
  EXPECT_THROW(gronwallBound(1.0, 0.5, 1.0, 0), std::invalid_argument);
}

TEST(Gronwall, RandomSequencesNeverExceedBound) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    const double R = 1e-3 + unit(gen);
    const double H = 2.0 * unit(gen);
    const double M0 = 5.0 * unit(gen);
    const int N = len(gen);
    double m = M0;
    const double bound = gronwallBound(M0, R, H, N);
    for (int k = 1; k <= N; ++k) {
      m = unit(gen) * ((1.0 + R) * m + H);   // any value allowed by the hypothesis
      EXPECT_LE(m, gronwallBound(M0, R, H, k));
    }
    EXPECT_LE(m, bound);
  }
}

TEST(Prefactor, ContinuousAtZero) {
  EXPECT_EQ(growthPrefactor(4.0, 0.0), 4.0);
  EXPECT_NEAR(growthPrefactor(4.0, 1e-9), 4.0, 1e-7);
}

TEST(Prefactor, LimitNearMinusOne) {
  for (double R : {-1.0 + 1e-6, -1.0 - 1e-6}) {
    EXPECT_NEAR(growthPrefactor(3.0, R), 1.0 - std::exp(-3.0), 1e-4);
  }
  EXPECT_NEAR(growthPrefactor(3.0, -1.0), 0.950213, 1e-6);
}

TEST(Prefactor, MonotoneApproachToOne) {
  double prev = 0.0;
  for (int N = 1; N <= 50; ++N) {
    const double p = growthPrefactor(N, -1.0);
    EXPECT_GE(p, prev);
    EXPECT_LE(p, 1.0);
    EXPECT_NEAR(p, 1.0 - std::exp(-static_cast<double>(N)), 1e-15);
    prev = p;
  }
  EXPECT_NEAR(prev, 1.0, 1e-15);
}

TEST(BoundParams, Invariants) {
  const auto bp = makeBoundParameters(3.0, 2.0, 1e-8, 8, 0.125, 1, 0.4);
  EXPECT_EQ(bp.R_mu, (3.0 - 2.0) / 2.0);
  EXPECT_THROW(makeBoundParameters(0.0, 2.0, 0.0, 8, 0.1, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(makeBoundParameters(1.0, 0.5, 0.0, 8, 0.1, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(makeBoundParameters(1.0, 2.0, -1.0, 8, 0.1, 1, 0.0), std::invalid_argument);
}

TEST(Lipschitz, IdentityHasUnitRatio) {
  std::mt19937_64 gen(1);
  std::vector<ProbePair> probes;
  for (int i = 0; i < 10; ++i) probes.emplace_back(fixtures::randomVector(8, gen), fixtures::randomVector(8, gen));
  const auto rep = lipschitzEstimate(Matrix::Identity(8, 8), 3.0, probes);
  EXPECT_EQ(rep.L, 1.0);
  EXPECT_DOUBLE_EQ(rep.max_ratio, 1.0);
  EXPECT_DOUBLE_EQ(rep.C, 3.0);
}

TEST(Lipschitz, InequalityHoldsOnRandomProbes) {
  const auto m = testbed::buildModelInstance(16, 5, 1.0, 1.0, 0.1);
  std::mt19937_64 gen(77);
  std::vector<ProbePair> probes;
  for (int i = 0; i < 100; ++i) probes.emplace_back(fixtures::randomVector(16, gen), fixtures::randomVector(16, gen));
  const double mu = 4.5;
  const auto rep = lipschitzEstimate(m.M, mu, probes);
  const double nm = m.M.cwiseAbs().rowwise().sum().maxCoeff();
  EXPECT_DOUBLE_EQ(rep.L, nm * nm);
  for (const auto & [u, v] : probes) {
    EXPECT_LE((m.M * (u - v)).cwiseAbs().maxCoeff(), rep.C / mu * (u - v).cwiseAbs().maxCoeff() * (1 + 1e-15));
  }
  EXPECT_DOUBLE_EQ(lemmaConstant(rep.L, 0.2, 0.5), rep.L * 0.4);
  EXPECT_THROW(lemmaConstant(1.0, 0.2, 0.0), std::invalid_argument);
}

TEST(TwinErrors, Definitions) {
  const Matrix M = 0.5 * Matrix::Identity(3, 3);
  const Vector u0 = Vector::Constant(3, 4.0);
  const Vector truth = Vector::Constant(3, 2.0);
  const Vector uda = Vector::Constant(3, 2.5);
  const auto e = twinErrors(M, u0, truth, uda, 2);
  EXPECT_EQ(e.xi, 2.0);
  EXPECT_EQ(e.sigma, 0.5);
  EXPECT_EQ(e.delta, 0.5);
}

TEST(Recurrence, Sequence) {
  const auto bp = makeBoundParameters(1.0, 4.0, 1e-3, 2, 0.5, 1, 0.8);
  const double P = std::expm1(2.0 * bp.R_mu) / bp.R_mu;
  const auto c = boundSequence(bp, 4);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0], 0.8);
  for (int n = 0; n < 3; ++n) EXPECT_NEAR(c[n + 1], P * (0.25 * c[n] + 1e-3), 1e-16);
  // contracting, so the sequence approaches its fixed point
  const double fp = recurrenceFixedPoint(bp);
  EXPECT_NEAR(fp, 1e-3 * P / (1.0 - 0.25 * P), 1e-16);
  auto longer = boundSequence(bp, 200);
  EXPECT_NEAR(longer.back(), fp, 1e-14);
}

TEST(Recurrence, LargeConditionNumberLimit) {
  // With C fixed and mu(A) growing, the fixed point tends to eps (1 - e^{-N}).
  const double eps = 1e-6;
  const int N = 4;
  double prev_gap = 1.0;
  for (double mu : {1e2, 1e4, 1e6}) {
    const auto bp = makeBoundParameters(1.0, mu, eps, N, 0.25, 1, 1.0);
    const double target = eps * -std::expm1(-N);
    const double gap = std::abs(recurrenceFixedPoint(bp) - target) / target;
    EXPECT_LT(gap, prev_gap);
    prev_gap = gap;
  }
  EXPECT_LT(prev_gap, 1e-4);
}

TEST(History, ZeroWhereIterateEqualsReference) {
  auto p = fixtures::makeParareal({.np = 16, .n_steps = 5, .nobs = 4}, 2, 2);
  const auto res = parareal::runParareal(p, 1e-300, 4);
  const auto ref = parareal::serialFineChain(p);
  auto traj = res.trajectory;
  traj.u[2] = ref;
  const auto bp = makeBoundParameters(1.0, 2.0, 0.0, 4, 0.25, 1, 1.0);
  const auto h = errorAndBoundHistory(traj, ref, bp);
  for (double e : h.E[2]) EXPECT_EQ(e, 0.0);
  for (const auto & row : h.E)
    for (double e : row) EXPECT_GE(e, 0.0);
  EXPECT_EQ(h.E[0][0], 0.0);
  EXPECT_THROW(errorAndBoundHistory(traj, {}, bp), std::invalid_argument);
  EXPECT_NEAR(h.asymptotic_factor, 1.0 - std::exp(-4.0), 1e-15);
}

TEST(Roundoff, TermsSumToTotal) {
  const auto bp = makeBoundParameters(2.0, 3.0, 1e-9, 8, 0.125, 1, 0.5);
  const auto t = roundoffBound(bp, 1e-15, 2e-16, 3e-16);
  EXPECT_EQ(t.total, t.initial + t.iteration + t.rho_term);
  const double P = bp.prefactor();
  EXPECT_DOUBLE_EQ(t.initial, std::exp(8.0 * bp.R_mu) * 2e-16);
  EXPECT_DOUBLE_EQ(t.iteration, P * (2.0 / 3.0 + 1.0) * 1e-15);
  EXPECT_DOUBLE_EQ(t.rho_term, P * 2.0 * 3e-16);
}

TEST(Roundoff, IterationTermIsolated) {
  const auto bp = makeBoundParameters(2.0, 3.0, 1e-9, 8, 0.125, 1, 0.5);
  const auto t = roundoffBound(bp, 1e-15, 0.0, 0.0);
  EXPECT_EQ(t.initial, 0.0);
  EXPECT_EQ(t.rho_term, 0.0);
  EXPECT_EQ(t.total, t.iteration);
  EXPECT_THROW(roundoffBound(bp, 1e-15, 0.0, -1.0), std::invalid_argument);
}

TEST(Roundoff, ProfileIsTiny) {
  auto p = fixtures::makeParareal({.np = 16, .n_steps = 5, .nobs = 4}, 2, 2);
  const auto res = parareal::runParareal(p, 1e-12, 4);
  const auto prof = roundoffProfile(res.trajectory, p.M());
  ASSERT_EQ(prof.global.size(), res.trajectory.u.size());
  for (std::size_t n = 0; n < prof.global.size(); ++n) {
    EXPECT_EQ(prof.global[n][0], 0.0);
    for (std::size_t k = 0; k < prof.global[n].size(); ++k) {
      EXPECT_GE(prof.global[n][k], 0.0);
      EXPECT_LT(prof.global[n][k], 1e-13);
    }
  }
  EXPECT_GE(prof.rho, 0.0);
  EXPECT_LT(prof.rho, 1e-14);
}

TEST(MpsAccuracy, MeasuresInnerSolverError) {
  auto exact = fixtures::makeParareal({.np = 16, .n_steps = 5, .nobs = 4}, 1, 0);
  const auto a = parareal::runParareal(exact, 1e-12, 4);
  EXPECT_LT(mpsAccuracy(a.trajectory, exact), 1e-12);

  auto loose = fixtures::makeParareal({.np = 16, .n_steps = 5, .nobs = 4}, 4, 2);
  loose.mps.tol = 1e-4;
  const auto b = parareal::runParareal(loose, 1e-12, 4);
  auto tight = loose;
  tight.mps.tol = 1e-13;
  const auto c = parareal::runParareal(tight, 1e-12, 4);
  EXPECT_GT(mpsAccuracy(b.trajectory, loose), mpsAccuracy(c.trajectory, tight));
  EXPECT_LT(mpsAccuracy(c.trajectory, tight), 1e-10);
}
