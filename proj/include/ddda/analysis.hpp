/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ddda/common.hpp"
#include "ddda/parareal.hpp"

/// Convergence and round-off bounds for the Parareal iteration, evaluated
/// against measured runs. All norms are max norms.
namespace ddda::analysis {

// -----------------------------------------------------------------------------
// Discrete Gronwall
// -----------------------------------------------------------------------------

/// (e^{N R} - 1) / R, continuous at R = 0 (value N).
inline double growthPrefactor(double N, double R) {
  if (R == 0.0) return N;
  return std::expm1(N * R) / R;
}

/// If |M_k| <= (1 + R)|M_{k-1}| + H for k = 1..N then
/// |M_k| <= e^{N R}|M_0| + (e^{N R} - 1)/R H.
inline double gronwallBound(double M0, double R, double H, int N) {
  if (!(R > 0.0)) throw std::invalid_argument("gronwall_bound: R must be positive");
  if (H < 0.0) throw std::invalid_argument("gronwall_bound: H must be nonnegative");
  if (N < 1) throw std::invalid_argument("gronwall_bound: N must be positive");
  const double n = static_cast<double>(N);
  return std::exp(n * R) * std::abs(M0) + growthPrefactor(n, R) * H;
}

// -----------------------------------------------------------------------------
// Constants of the bound
// -----------------------------------------------------------------------------

struct BoundParameters {
  double C = 0.0;
  double mu_A = 1.0;
  double R_mu = 0.0;       ///< (C - mu_A) / mu_A
  double eps_mps = 0.0;
  int N = 1;               ///< number of slabs
  double h = 0.0;
  int p = 1;
  double C_h = 0.0;

  double prefactor() const { return growthPrefactor(static_cast<double>(N), R_mu); }
};

inline BoundParameters makeBoundParameters(double C, double mu_A, double eps_mps, int N, double h, int p,
                                           double C_h) {
  if (!(C > 0.0)) throw std::invalid_argument("bound parameters: C must be positive");
  if (!(mu_A >= 1.0)) throw std::invalid_argument("bound parameters: mu(A) must be >= 1");
  if (eps_mps < 0.0) throw std::invalid_argument("bound parameters: eps_mps must be nonnegative");
  if (N < 1) throw std::invalid_argument("bound parameters: N must be positive");
  BoundParameters bp;
  bp.C = C;
  bp.mu_A = mu_A;
  bp.R_mu = (C - mu_A) / mu_A;
  bp.eps_mps = eps_mps;
  bp.N = N;
  bp.h = h;
  bp.p = p;
  bp.C_h = C_h;
  return bp;
}

struct LipschitzReport {
  double L = 0.0;          ///< ||M||^2
  double max_ratio = 0.0;  ///< max over probes of ||M u - M v|| / ||u - v||
  double C = 0.0;          ///< mu(A) * max_ratio
};

using ProbePair = std::pair<Vector, Vector>;

/// Smallest C with ||M u - M v|| <= (C / mu(A)) ||u - v|| on every probe pair.
inline LipschitzReport lipschitzEstimate(const Matrix & M, double mu_A, std::span<const ProbePair> probes) {
  if (M.rows() != M.cols()) throw std::invalid_argument("lipschitz_estimate: M must be square");
  LipschitzReport rep;
  const double nm = normInf(M);
  rep.L = nm * nm;
  for (const auto & [u, v] : probes) {
    const Vector d = u - v;
    const double den = normInf(d);
    if (den == 0.0) continue;
    rep.max_ratio = std::max(rep.max_ratio, normInf(Vector(M * d)) / den);
  }
  rep.C = mu_A * rep.max_ratio;
  return rep;
}

/// C = L ||delta|| / ||xi||.
inline double lemmaConstant(double L, double delta_err, double xi) {
  if (!(xi > 0.0)) throw std::invalid_argument("lemma constant: ||xi|| must be positive");
  return L * delta_err / xi;
}

/// Twin-experiment instances of the abstract error symbols.
struct TwinErrors {
  double xi = 0.0;         ///< ||u0 - u_truth||
  double sigma = 0.0;      ///< ||M^{N-1}(u0 - u_truth)||
  double delta = 0.0;      ///< ||u^DA - u_truth||
};

inline TwinErrors twinErrors(const Matrix & M, const Vector & u0, const Vector & truth, const Vector & u_da,
                             int steps) {
  TwinErrors e;
  Vector err = u0 - truth;
  e.xi = normInf(err);
  for (int k = 0; k < steps; ++k) err = M * err;
  e.sigma = normInf(err);
  e.delta = normInf(Vector(u_da - truth));
  return e;
}

// -----------------------------------------------------------------------------
// Measured quantities of a Parareal run
// -----------------------------------------------------------------------------

/// E[n][k] = ||u_k^DA - u_k^n||.
inline std::vector<std::vector<double>> errorTable(const parareal::PararealTrajectory & traj,
                                                   const std::vector<Vector> & reference) {
  if (reference.empty()) throw std::invalid_argument("error table: missing reference");
  std::vector<std::vector<double>> E;
  for (const auto & un : traj.u) {
    if (un.size() != reference.size()) throw std::invalid_argument("error table: reference has wrong slab count");
    std::vector<double> row;
    for (std::size_t k = 0; k < un.size(); ++k) row.push_back(normInf(Vector(reference[k] - un[k])));
    E.push_back(std::move(row));
  }
  return E;
}

/// Base-case error max_k ||u_k^DA - M u_{k-1}^0||, u^0 the initial coarse iterate.
inline double baseCaseError(const parareal::PararealTrajectory & traj, const std::vector<Vector> & reference,
                            const Matrix & M) {
  double worst = 0.0;
  const auto & u0 = traj.u.front();
  for (std::size_t k = 1; k < u0.size(); ++k)
    worst = std::max(worst, normInf(Vector(reference[k] - M * u0[k - 1])));
  return worst;
}

/// max over recorded (n, k) of ||MPS(u_{k-1}^n) - DA(u_{k-1}^n)||, DA being the
/// direct solve of the same slab problem: the accuracy of the inner solver.
inline double mpsAccuracy(const parareal::PararealTrajectory & traj, const parareal::PararealProblem & prob) {
  double worst = 0.0;
  for (std::size_t n = 0; n < traj.fine.size(); ++n) {
    for (std::size_t k = 1; k < traj.fine[n].size(); ++k) {
      const auto p3 = prob.config.threeD(k, Vector(prob.M() * traj.u[n][k - 1]));
      worst = std::max(worst, normInf(Vector(traj.fine[n][k] - var::solveVarDirect(p3).u_da)));
    }
  }
  return worst;
}

/// Probe pairs (u_k^DA, u_k^n) over every recorded iterate.
inline std::vector<ProbePair> trajectoryProbes(const parareal::PararealTrajectory & traj,
                                               const std::vector<Vector> & reference) {
  std::vector<ProbePair> probes;
  for (const auto & un : traj.u) {
    for (std::size_t k = 0; k < un.size(); ++k) probes.emplace_back(reference[k], un[k]);
  }
  return probes;
}

// -----------------------------------------------------------------------------
// Error bound recurrence
// -----------------------------------------------------------------------------

/// c_0 = C_h, c_{n+1} = P (C/mu(A) c_n + eps), P = (e^{N R_mu} - 1)/R_mu.
/// Index 0 corresponds to the initial coarse iterate.
inline std::vector<double> boundSequence(const BoundParameters & bp, std::size_t count) {
  std::vector<double> c;
  if (count == 0) return c;
  c.push_back(bp.C_h);
  const double P = bp.prefactor();
  while (c.size() < count) c.push_back(P * (bp.C / bp.mu_A * c.back() + bp.eps_mps));
  return c;
}

/// Fixed point of the recurrence, eps P / (1 - P C/mu(A)); infinite when the
/// recurrence does not contract.
inline double recurrenceFixedPoint(const BoundParameters & bp) {
  const double P = bp.prefactor();
  const double gain = P * bp.C / bp.mu_A;
  if (gain >= 1.0) return std::numeric_limits<double>::infinity();
  return bp.eps_mps * P / (1.0 - gain);
}

struct ErrorHistory {
  std::vector<std::vector<double>> E;        ///< [n][k]
  std::vector<double> c_bound;               ///< [n]
  std::vector<std::vector<double>> R_round;  ///< [n][k], filled by roundoffProfile
  double rho_local = 0.0;
  double prefactor = 0.0;
  double asymptotic_factor = 0.0;            ///< 1 - e^{-N}
  double fixed_point = 0.0;

  /// True when E_k^n <= c_n for every recorded (n, k).
  bool boundHolds() const {
    for (std::size_t n = 0; n < E.size(); ++n) {
      for (double e : E[n]) {
        if (!(e <= c_bound[n])) return false;
      }
    }
    return true;
  }
};

inline ErrorHistory errorAndBoundHistory(const parareal::PararealTrajectory & traj,
                                         const std::vector<Vector> & reference, const BoundParameters & bp) {
  ErrorHistory h;
  h.E = errorTable(traj, reference);
  h.c_bound = boundSequence(bp, h.E.size());
  h.prefactor = bp.prefactor();
  h.asymptotic_factor = -std::expm1(-static_cast<double>(bp.N));
  h.fixed_point = recurrenceFixedPoint(bp);
  return h;
}

// -----------------------------------------------------------------------------
// Round-off
// -----------------------------------------------------------------------------

struct RoundoffTerms {
  double total = 0.0;
  double initial = 0.0;     ///< e^{N R} R_0
  double iteration = 0.0;   ///< P (C/mu + 1) R_prev
  double rho_term = 0.0;    ///< P 2 rho
};

inline RoundoffTerms roundoffBound(const BoundParameters & bp, double R_prev, double R0, double rho) {
  if (rho < 0.0 || R_prev < 0.0 || R0 < 0.0) throw std::invalid_argument("roundoff_bound: negative input");
  const double P = bp.prefactor();
  RoundoffTerms t;
  t.initial = std::exp(static_cast<double>(bp.N) * bp.R_mu) * R0;
  t.iteration = P * (bp.C / bp.mu_A + 1.0) * R_prev;
  t.rho_term = P * 2.0 * rho;
  t.total = t.initial + t.iteration + t.rho_term;
  return t;
}

struct RoundoffProfile {
  std::vector<std::vector<double>> global;   ///< R_k^n, [n][k]
  std::vector<std::vector<double>> local;    ///< rho_k^n, [n][k]
  double rho = 0.0;                          ///< max |rho_k|
};

/// Repeats every recombination sweep in extended precision and differences
/// it against the stored double-precision iterates. The local error redoes a
/// single update from the stored double inputs; the global error carries the
/// extended-precision state through the whole sweep.
inline RoundoffProfile roundoffProfile(const parareal::PararealTrajectory & traj, const Matrix & M) {
  using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const LMatrix Ml = M.cast<long double>();
  RoundoffProfile prof;
  const std::size_t s = traj.slabs();
  for (std::size_t n = 0; n < traj.u.size(); ++n) {
    std::vector<double> g(s + 1, 0.0);
    std::vector<double> l(s + 1, 0.0);
    if (n > 0) {
      LVector carried = traj.u[n][0].cast<long double>();
      for (std::size_t k = 1; k <= s; ++k) {
        const LVector dl = traj.delta[n - 1][k].cast<long double>();
        carried = Ml * carried + dl;
        const LVector single = Ml * traj.u[n][k - 1].cast<long double>() + dl;
        g[k] = static_cast<double>((traj.u[n][k].cast<long double>() - carried).cwiseAbs().maxCoeff());
        l[k] = static_cast<double>((traj.u[n][k].cast<long double>() - single).cwiseAbs().maxCoeff());
        prof.rho = std::max(prof.rho, l[k]);
      }
    } else {
      LVector carried = traj.u[0][0].cast<long double>();
      for (std::size_t k = 1; k <= s; ++k) {
        const LVector single = Ml * traj.u[0][k - 1].cast<long double>();
        carried = Ml * carried;
        g[k] = static_cast<double>((traj.u[0][k].cast<long double>() - carried).cwiseAbs().maxCoeff());
        l[k] = static_cast<double>((traj.u[0][k].cast<long double>() - single).cwiseAbs().maxCoeff());
        prof.rho = std::max(prof.rho, l[k]);
      }
    }
    prof.global.push_back(std::move(g));
    prof.local.push_back(std::move(l));
  }
  return prof;
}

}  // namespace ddda::analysis
