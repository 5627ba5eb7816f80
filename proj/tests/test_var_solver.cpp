/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "fixtures.hpp"

using namespace ddda;
using namespace ddda::var;
using fixtures::Instance;

namespace {

// Observations generated from u0 itself through G, so the tiled background fits perfectly.
VarProblemConfig perfectFit(Instance s) {
  auto cfg = fixtures::makeConfig(s);
  for (std::size_t k = 0; k < cfg.observations.v.size(); ++k) {
    const Vector state = k == 0 ? cfg.u0 : Vector(cfg.instance.M * cfg.u0);
    cfg.observations.v[k] = gather(state, cfg.observations.obs_indices[k]);
  }
  return cfg;
}

// Brute-force expansion of the 4D functional with an explicitly inverted B.
double bruteCost4D(const Vector & u, const VarProblemConfig & c) {
  const Index np = c.instance.np;
  const Matrix binv = c.covpair.B.inverse();
  double bg = 0.0;
  for (Index k = 0; k < c.instance.n_steps; ++k) {
    const Vector e = u.segment(k * np, np) - c.u0;
    for (Index i = 0; i < np; ++i)
      for (Index j = 0; j < np; ++j) bg += e(i) * binv(i, j) * e(j);
  }
  double obs = 0.0;
  Index row = 0;
  for (Index k = 0; k < c.instance.n_steps; ++k) {
    const Vector state = u.segment(k * np, np);
    const Vector seen = k == 0 ? state : Vector(c.instance.M * state);
    for (std::size_t r = 0; r < c.observations.obs_indices[k].size(); ++r, ++row) {
      const double m = seen(c.observations.obs_indices[k][r]) - c.observations.v[k](static_cast<Index>(r));
      obs += m * m;
    }
  }
  return c.alpha * bg + obs / (c.covpair.sigma_r * c.covpair.sigma_r);
}

double bruteCost3D(const Vector & u, const ThreeDVarProblem & p) {
  const Matrix binv = p.B.inverse();
  const Vector e = u - p.background;
  double misfit = 0.0;
  for (std::size_t r = 0; r < p.obs_indices.size(); ++r) {
    const double m = u(p.obs_indices[r]) - p.obs(static_cast<Index>(r));
    misfit += m * m;
  }
  return misfit / p.obs_variance + p.lambda * e.dot(binv * e);
}

// Independent Hessian/2 and right-hand side, from explicit inverses and a dense G.
std::pair<Matrix, Vector> bruteNormal(const VarProblemConfig & c) {
  const Index np = c.instance.np;
  const Index n = c.instance.n_steps;
  const Matrix binv = c.covpair.B.inverse();
  Matrix G = Matrix::Zero(0, np * n);
  Vector v(0);
  for (Index k = 0; k < n; ++k) {
    const Matrix H = c.observations.H(static_cast<std::size_t>(k), np);
    const Matrix blk = k == 0 ? H : Matrix(H * c.instance.M);
    Matrix g2 = Matrix::Zero(G.rows() + blk.rows(), np * n);
    g2.topRows(G.rows()) = G;
    g2.block(G.rows(), k * np, blk.rows(), np) = blk;
    G = g2;
    Vector v2(v.size() + c.observations.v[k].size());
    v2 << v, c.observations.v[k];
    v = v2;
  }
  const double w = 1.0 / (c.covpair.sigma_r * c.covpair.sigma_r);
  Matrix S = w * G.transpose() * G;
  Vector rhs = w * G.transpose() * v;
  for (Index k = 0; k < n; ++k) {
    S.block(k * np, k * np, np, np) += c.alpha * binv;
    rhs.segment(k * np, np) += c.alpha * binv * c.u0;
  }
  return {S, rhs};
}

Vector fdGradient(const std::function<double(const Vector &)> & f, const Vector & u, double step) {
  Vector g(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    Vector a = u, b = u;
    a(i) += step;
    b(i) -= step;
    g(i) = (f(a) - f(b)) / (2.0 * step);
  }
  return g;
}

}  // namespace

TEST(EvalCost, PerfectFitIsZero) {
  const auto cfg = perfectFit({.np = 12, .n_steps = 4, .nobs = 4});
  EXPECT_NEAR(evalCost(tiledBackground(cfg), cfg, Variant::fourD), 0.0, 1e-20);
}

TEST(EvalCost, BackgroundTermIsolated) {
  // At the tiled background only the misfit survives, whatever alpha.
  Instance s{.np = 10, .n_steps = 3, .nobs = 3};
  s.alpha = 1.0;
  const auto a = fixtures::makeConfig(s);
  s.alpha = 7.5;
  const auto b = fixtures::makeConfig(s);
  const Vector ub = tiledBackground(a);
  const Vector misfit = a.G.G * ub - a.stackedObservations();
  const double expected = misfit.squaredNorm() / 0.25;
  EXPECT_NEAR(evalCost(ub, a, Variant::fourD), expected, 1e-12 * expected);
  EXPECT_NEAR(evalCost(ub, b, Variant::fourD), expected, 1e-12 * expected);
}

TEST(EvalCost, NonPositiveAlphaRejected) {
  auto cfg = fixtures::makeConfig({.np = 6, .n_steps = 2, .nobs = 2});
  cfg.alpha = 0.0;
  EXPECT_THROW(evalCost(tiledBackground(cfg), cfg, Variant::fourD), std::invalid_argument);
}

TEST(EvalCost, MatchesQuadraticFormExpansion) {
  const auto cfg = fixtures::makeConfig({.np = 6, .n_steps = 3, .nobs = 2, .L = 1.3, .sigma_r = 0.4});
  std::mt19937_64 gen(5);
  for (int t = 0; t < 10; ++t) {
    const Vector u = fixtures::randomVector(18, gen);
    const double ref = bruteCost4D(u, cfg);
    EXPECT_NEAR(evalCost(u, cfg, Variant::fourD), ref, 1e-9 * ref);
    const Vector u3 = u.head(6);
    const auto p = cfg.threeD();
    const double ref3 = bruteCost3D(u3, p);
    EXPECT_NEAR(evalCost(u3, cfg, Variant::threeD), ref3, 1e-9 * ref3);
  }
}

TEST(EvalCost, ShapeMismatch) {
  const auto cfg = fixtures::makeConfig({.np = 6, .n_steps = 3, .nobs = 2});
  EXPECT_THROW(evalCost(Vector::Zero(7), cfg, Variant::fourD), std::invalid_argument);
  EXPECT_THROW(evalCost(Vector::Zero(7), cfg, Variant::threeD), std::invalid_argument);
  EXPECT_THROW(gradient(Vector::Zero(7), cfg, Variant::fourD), std::invalid_argument);
}

TEST(EvalCost, ExactlyQuadratic) {
  const auto cfg = fixtures::makeConfig({.np = 8, .n_steps = 3, .nobs = 3});
  const Matrix A = hessianCondition(cfg, Variant::fourD).A;
  std::mt19937_64 gen(9);
  const Vector d = fixtures::randomVector(24, gen);
  const double dad = d.dot(A * d);
  for (int t = 0; t < 5; ++t) {
    const Vector u = fixtures::randomVector(24, gen, 3.0);
    const double second = evalCost(u + d, cfg, Variant::fourD) - 2.0 * evalCost(u, cfg, Variant::fourD) +
                          evalCost(u - d, cfg, Variant::fourD);
    EXPECT_NEAR(second, dad, 1e-9 * std::abs(dad));
  }
}

TEST(Gradient, MatchesCentralDifferences) {
  const auto cfg = fixtures::makeConfig({.np = 10, .n_steps = 3, .nobs = 3});
  std::mt19937_64 gen(17);
  for (auto variant : {Variant::fourD, Variant::threeD}) {
    const Index n = variant == Variant::fourD ? 30 : 10;
    for (int t = 0; t < 20; ++t) {
      const Vector u = fixtures::randomVector(n, gen);
      const Vector g = gradient(u, cfg, variant);
      const Vector fd = fdGradient([&](const Vector & x) { return evalCost(x, cfg, variant); }, u, 1e-4);
      EXPECT_LE(fixtures::relErr(fd, g), 1e-6);
    }
  }
}

TEST(SolveDirect, BalancedAverage) {
  ThreeDVarProblem p;
  p.background = Vector::LinSpaced(5, 0.0, 4.0);
  p.obs_indices = {0, 1, 2, 3, 4};
  p.obs = Vector::Constant(5, 2.0);
  p.obs_variance = 1.0;
  p.B = p.V = Matrix::Identity(5, 5);
  const auto s = solveVarDirect(p);
  EXPECT_LT((s.u_da - (p.background + p.obs) / 2.0).cwiseAbs().maxCoeff(), 1e-14);

  const auto h = hessianCondition(normalSystem(p));
  EXPECT_LT((h.A - 4.0 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_DOUBLE_EQ(h.mu, 1.0);
}

TEST(SolveDirect, BackgroundAlreadyOptimal) {
  const auto cfg = perfectFit({.np = 12, .n_steps = 4, .nobs = 4});
  const auto s = solveVarDirect(cfg, Variant::fourD);
  EXPECT_LE(fixtures::relErr(s.u_da, tiledBackground(cfg)), 1e-12);
}

TEST(SolveDirect, MatchesEigendecompositionOracle) {
  const auto cfg = fixtures::makeConfig({.np = 8, .n_steps = 3, .nobs = 3, .seed = 3});
  const auto s = solveVarDirect(cfg, Variant::fourD);
  const auto [S, rhs] = bruteNormal(cfg);
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const Vector ref = es.eigenvectors() *
                     (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * rhs));
  EXPECT_LE(fixtures::relErr(s.u_da, ref), 1e-8);
  EXPECT_LE(gradient(s.u_da, cfg, Variant::fourD).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(s.grad_norm, 1e-10 * (1.0 + rhs.cwiseAbs().maxCoeff()));
  EXPECT_GE(s.cost, 0.0);
}

TEST(SolveDirect, FixedPoint) {
  const auto cfg = fixtures::makeConfig({.np = 16, .n_steps = 4, .nobs = 4});
  const auto s = solveVarDirect(cfg, Variant::fourD);
  const auto sys = normalSystem(cfg, Variant::fourD);
  const Vector step = Eigen::LLT<Matrix>(sys.S).solve(Vector(sys.rhs - sys.S * s.u_da));
  EXPECT_LE(step.cwiseAbs().maxCoeff(), 1e-12 * s.u_da.cwiseAbs().maxCoeff());
}

TEST(SolveDirect, SingularSystemReported) {
  ThreeDVarProblem p;
  p.background = Vector::Zero(3);
  p.obs_variance = 1.0;
  p.B = Matrix::Identity(3, 3);
  p.V = Matrix::Identity(3, 3);
  p.lambda = 0.0;
  EXPECT_THROW(solveVarDirect(p), std::runtime_error);
  EXPECT_THROW(hessianCondition(normalSystem(p)), std::runtime_error);
}

TEST(Hessian, MatchesExplicitInverse) {
  const auto cfg = fixtures::makeConfig({.np = 6, .n_steps = 2, .nobs = 2, .L = 1.5});
  const auto rep = hessianCondition(cfg, Variant::fourD);
  const auto [S, rhs] = bruteNormal(cfg);
  const Matrix A = 2.0 * S;
  EXPECT_LT((rep.A - A).cwiseAbs().maxCoeff(), 1e-9 * A.cwiseAbs().maxCoeff());
  EXPECT_TRUE(rep.A.isApprox(rep.A.transpose(), 0.0));
  const Matrix Ainv = A.inverse();
  const double mu = A.cwiseAbs().rowwise().sum().maxCoeff() * Ainv.cwiseAbs().rowwise().sum().maxCoeff();
  EXPECT_NEAR(rep.mu, mu, 1e-8 * mu);
}

TEST(Hessian, ConditionAtLeastOne) {
  for (double L : {0.0, 1.0, 2.0}) {
    const auto cfg = fixtures::makeConfig({.np = 12, .n_steps = 3, .nobs = 4, .L = L});
    EXPECT_GE(hessianCondition(cfg, Variant::fourD).mu, 1.0);
    EXPECT_GE(hessianCondition(cfg, Variant::threeD).mu, 1.0);
  }
}
