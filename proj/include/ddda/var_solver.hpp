/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "ddda/common.hpp"
#include "ddda/testbed.hpp"

/// Direct (dense normal-equations) evaluation and minimization of the 3D-Var
/// and 4D-Var cost functions. This is the reference every iterative solver in
/// the library is checked against.
namespace ddda::var {

enum class Variant { fourD, threeD };

// -----------------------------------------------------------------------------
/// Single-time problem: J(u) = ||H u - v||^2_{R^-1} + lambda ||u - u_b||^2_{B^-1},
/// with R = obs_variance * I.
struct ThreeDVarProblem {
  Vector background;
  IndexList obs_indices;
  Vector obs;
  double obs_variance = 1.0;
  Matrix B;
  Matrix V;
  double lambda = 1.0;

  Index np() const { return background.size(); }
  Vector innovation() const { return obs - gather(background, obs_indices); }
};

struct VarProblemConfig {
  testbed::ModelInstance instance;
  testbed::CovarianceFactorPair covpair;
  testbed::ObservationSet observations;
  testbed::BlockObservationOperator G;
  Vector u0;
  double alpha = 1.0;
  double lambda = 1.0;

  void validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("var config: alpha must be positive");
    if (!(lambda > 0.0)) throw std::invalid_argument("var config: lambda must be positive");
    if (u0.size() != instance.np) throw std::invalid_argument("var config: u0 must have length NP");
  }

  /// 3D-Var at time index k with background `ub` (defaults to u0 at k = 0).
  ThreeDVarProblem threeD(std::size_t k = 0) const { return threeD(k, u0); }
  ThreeDVarProblem threeD(std::size_t k, const Vector & ub) const {
    ThreeDVarProblem p;
    p.background = ub;
    p.obs_indices = observations.obs_indices.at(k);
    p.obs = observations.v.at(k);
    p.obs_variance = covpair.sigma_r * covpair.sigma_r;
    p.B = covpair.B;
    p.V = covpair.V;
    p.lambda = lambda;
    return p;
  }

  /// All observations stacked in the row order of G.
  Vector stackedObservations() const {
    Vector v(observations.totalCount());
    Index row = 0;
    for (const auto & vk : observations.v) {
      v.segment(row, vk.size()) = vk;
      row += vk.size();
    }
    return v;
  }
};

struct AnalysisState {
  Vector u_da;
  double cost = 0.0;
  double grad_norm = 0.0;
};

struct HessianReport {
  Matrix A;
  double mu = 1.0;
};

// -----------------------------------------------------------------------------
// Building blocks
// -----------------------------------------------------------------------------

/// B^{-1} = V^{-T} V^{-1} from the triangular factor.
inline Matrix inverseFromFactor(const Matrix & V) {
  const Matrix vinv = V.triangularView<Eigen::Lower>().solve(Matrix::Identity(V.rows(), V.cols()));
  Matrix binv = vinv.transpose() * vinv;
  return 0.5 * (binv + binv.transpose());
}

/// ||x||^2_{B^-1} = ||V^{-1} x||^2.
inline double weightedSquare(const Matrix & V, const Vector & x) {
  return V.triangularView<Eigen::Lower>().solve(x).squaredNorm();
}

/// Stationarity system  S u = rhs  of J; the Hessian of J is 2 S.
struct NormalSystem {
  Matrix S;
  Vector rhs;
};

inline NormalSystem normalSystem(const ThreeDVarProblem & p) {
  const Index np = p.np();
  const Matrix binv = inverseFromFactor(p.V);
  NormalSystem sys;
  sys.S = p.lambda * binv;
  sys.rhs = p.lambda * (binv * p.background);
  const double w = 1.0 / p.obs_variance;
  for (std::size_t r = 0; r < p.obs_indices.size(); ++r) {
    const Index j = p.obs_indices[r];
    if (j < 0 || j >= np) throw std::out_of_range("3D-Var: observation index out of range");
    sys.S(j, j) += w;
    sys.rhs(j) += w * p.obs(static_cast<Index>(r));
  }
  return sys;
}

/// Background of the 4D functional: u0 repeated over the N time levels.
inline Vector tiledBackground(const VarProblemConfig & c) {
  const Index n = c.instance.n_steps;
  Vector u(c.instance.np * n);
  for (Index k = 0; k < n; ++k) u.segment(k * c.instance.np, c.instance.np) = c.u0;
  return u;
}

inline NormalSystem normalSystem(const VarProblemConfig & c, Variant variant) {
  c.validate();
  if (variant == Variant::threeD) return normalSystem(c.threeD());

  const Index np = c.instance.np;
  const Index n = c.instance.n_steps;
  const Matrix & G = c.G.G;
  if (G.cols() != np * n) throw std::invalid_argument("4D-Var: G has wrong column count");
  const Vector v = c.stackedObservations();
  if (G.rows() != v.size()) throw std::invalid_argument("4D-Var: G rows do not match observations");

  const Matrix binv = inverseFromFactor(c.covpair.V);
  const double w = 1.0 / (c.covpair.sigma_r * c.covpair.sigma_r);
  NormalSystem sys;
  sys.S = w * (G.transpose() * G);
  const Vector ub = tiledBackground(c);
  sys.rhs = w * (G.transpose() * v);
  for (Index k = 0; k < n; ++k) {
    sys.S.block(k * np, k * np, np, np) += c.alpha * binv;
    sys.rhs.segment(k * np, np) += c.alpha * (binv * ub.segment(k * np, np));
  }
  sys.S = 0.5 * (sys.S + sys.S.transpose());
  return sys;
}

// -----------------------------------------------------------------------------
// Cost and gradient
// -----------------------------------------------------------------------------

inline double evalCost(const Vector & u, const ThreeDVarProblem & p) {
  if (u.size() != p.np()) throw std::invalid_argument("eval_cost: state has wrong length");
  const Vector misfit = gather(u, p.obs_indices) - p.obs;
  return misfit.squaredNorm() / p.obs_variance + p.lambda * weightedSquare(p.V, u - p.background);
}

inline Vector gradient(const Vector & u, const ThreeDVarProblem & p) {
  if (u.size() != p.np()) throw std::invalid_argument("gradient: state has wrong length");
  const NormalSystem sys = normalSystem(p);
  return 2.0 * (sys.S * u - sys.rhs);
}

/// 4D: alpha ||u - u0||^2_{B^-1} + ||G u - v||^2_{R^-1};
/// 3D: ||H u - v||^2_{R^-1} + lambda ||u - u_b||^2_{B^-1}.
inline double evalCost(const Vector & u, const VarProblemConfig & c, Variant variant) {
  c.validate();
  if (variant == Variant::threeD) return evalCost(u, c.threeD());

  const Index np = c.instance.np;
  const Index n = c.instance.n_steps;
  if (u.size() != np * n) throw std::invalid_argument("eval_cost: 4D state must have length NP * N");
  const Vector v = c.stackedObservations();
  if (c.G.G.rows() != v.size() || c.G.G.cols() != u.size())
    throw std::invalid_argument("eval_cost: G does not conform");
  double background = 0.0;
  for (Index k = 0; k < n; ++k) {
    background += weightedSquare(c.covpair.V, u.segment(k * np, np) - c.u0);
  }
  const Vector misfit = c.G.G * u - v;
  return c.alpha * background + misfit.squaredNorm() / (c.covpair.sigma_r * c.covpair.sigma_r);
}

inline Vector gradient(const Vector & u, const VarProblemConfig & c, Variant variant) {
  const NormalSystem sys = normalSystem(c, variant);
  if (u.size() != sys.rhs.size()) throw std::invalid_argument("gradient: state has wrong length");
  return 2.0 * (sys.S * u - sys.rhs);
}

// -----------------------------------------------------------------------------
// Direct minimization
// -----------------------------------------------------------------------------

namespace detail {

inline Vector solveNormal(const NormalSystem & sys, double & grad_norm) {
  Eigen::LLT<Matrix> llt(sys.S);
  if (llt.info() != Eigen::Success) throw std::runtime_error("solve_var_direct: normal matrix is singular");
  Vector u = llt.solve(sys.rhs);
  const double target = 1e-10 * (1.0 + normInf(sys.rhs));
  grad_norm = 2.0 * normInf(Vector(sys.S * u - sys.rhs));
  // a couple of rounds of iterative refinement for mildly ill-conditioned B
  for (int it = 0; it < 3 && grad_norm > target; ++it) {
    u += llt.solve(Vector(sys.rhs - sys.S * u));
    grad_norm = 2.0 * normInf(Vector(sys.S * u - sys.rhs));
  }
  if (!u.allFinite() || grad_norm > target)
    throw std::runtime_error("solve_var_direct: normal equations too ill-conditioned to solve");
  return u;
}

}  // namespace detail

inline AnalysisState solveVarDirect(const ThreeDVarProblem & p) {
  AnalysisState s;
  s.u_da = detail::solveNormal(normalSystem(p), s.grad_norm);
  s.cost = evalCost(s.u_da, p);
  return s;
}

inline AnalysisState solveVarDirect(const VarProblemConfig & c, Variant variant) {
  AnalysisState s;
  s.u_da = detail::solveNormal(normalSystem(c, variant), s.grad_norm);
  s.cost = evalCost(s.u_da, c, variant);
  return s;
}

// -----------------------------------------------------------------------------
// Hessian and its infinity-norm condition number
// -----------------------------------------------------------------------------

inline HessianReport hessianCondition(const NormalSystem & sys) {
  HessianReport rep;
  rep.A = 2.0 * sys.S;
  Eigen::LLT<Matrix> llt(rep.A);
  if (llt.info() != Eigen::Success) throw std::runtime_error("hessian_condition: Hessian is singular");
  const Matrix ainv = llt.solve(Matrix::Identity(rep.A.rows(), rep.A.cols()));
  rep.mu = std::max(1.0, normInf(rep.A) * normInf(ainv));
  return rep;
}

inline HessianReport hessianCondition(const VarProblemConfig & c, Variant variant) {
  return hessianCondition(normalSystem(c, variant));
}

}  // namespace ddda::var
