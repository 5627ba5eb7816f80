/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <chrono>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ddda/common.hpp"
#include "ddda/dd_mps.hpp"
#include "ddda/var_solver.hpp"

/// Parallel-in-time driver. The coarse propagator is the model step M; the
/// fine propagator on slab [t_{k-1}, t_k] is the Schwarz-solved 3D-Var
/// analysis whose background is M u_{k-1} and whose data are the
/// observations at t_k:
///   u_k^{n+1} = M u_{k-1}^{n+1} + MPS(u_{k-1}^n) - M u_{k-1}^n.
namespace ddda::parareal {

/// Slab k = 1..S covers [t_{k-1}, t_k] and owns the observations at t_k.
struct TimeSlabs {
  std::vector<double> boundaries;       ///< t_0 = 0, ..., t_S = T
  std::vector<IndexList> observations;  ///< entry k: grid points observed at t_k (entry 0 unused)

  std::size_t count() const { return boundaries.size() - 1; }
};

inline TimeSlabs makeSlabs(const var::VarProblemConfig & cfg) {
  if (cfg.instance.time_grid.size() < 2) throw std::invalid_argument("time slabs: need at least two time points");
  TimeSlabs s;
  s.boundaries = cfg.instance.time_grid;
  s.observations = cfg.observations.obs_indices;
  return s;
}

enum class CorrectorForm {
  classical,   ///< - M u_{k-1}^n
  literal,     ///< - M u_k^n, kept for comparison only
};

struct PararealProblem {
  var::VarProblemConfig config;
  mps::SubdomainPartition partition;
  mps::MpsOptions mps;
  CorrectorForm form = CorrectorForm::classical;

  std::size_t slabs() const { return static_cast<std::size_t>(config.instance.n_steps - 1); }
  const Matrix & M() const { return config.instance.M; }
};

/// States indexed [n][k], k = 0..S. Fine values and corrections of iteration n
/// are stored at [n][k] for k = 1..S (entry 0 is a zero vector).
struct PararealTrajectory {
  std::vector<std::vector<Vector>> u;
  std::vector<std::vector<Vector>> background;
  std::vector<std::vector<Vector>> fine;          ///< MPS(u_{k-1}^n)
  std::vector<std::vector<Vector>> delta;         ///< MPS(u_{k-1}^n) - M u_{k-1}^n
  std::vector<std::vector<double>> mps_residual;
  std::vector<std::vector<int>> mps_sweeps;
  std::vector<std::vector<char>> mps_converged;
  int n = 0;
  double rho_penalty = 1.0;

  std::size_t slabs() const { return u.empty() ? 0 : u.front().size() - 1; }
};

// -----------------------------------------------------------------------------

/// Sequential coarse propagation u_k = M u_{k-1}, k = 1..S, from u_0.
inline std::vector<Vector> coarseSweep(const Matrix & M, const Vector & u0, std::size_t slabs) {
  std::vector<Vector> out;
  out.reserve(slabs + 1);
  out.push_back(u0);
  for (std::size_t k = 1; k <= slabs; ++k) out.push_back(M * out.back());
  return out;
}

/// Backgrounds u_k^b = M u_{k-1} of a given set of states; u_0^b = u_0.
inline std::vector<Vector> backgrounds(const Matrix & M, const std::vector<Vector> & states) {
  std::vector<Vector> b;
  b.reserve(states.size());
  b.push_back(states.front());
  for (std::size_t k = 1; k < states.size(); ++k) b.push_back(M * states[k - 1]);
  return b;
}

inline PararealTrajectory initialTrajectory(const PararealProblem & prob) {
  PararealTrajectory t;
  t.rho_penalty = prob.mps.rho;
  const std::size_t s = prob.slabs();
  t.u.push_back(coarseSweep(prob.M(), prob.config.u0, s));
  t.background.push_back(t.u.back());
  return t;
}

struct LocalSolve {
  Vector u;
  double residual = 0.0;
  int sweeps = 0;
  bool converged = false;
};

/// Slab-local 3D-Var for slab k with background M u_prev and the data at t_k.
inline LocalSolve localDaSolve(std::size_t k, const Vector & u_prev, const PararealProblem & prob) {
  if (k < 1 || k > prob.slabs()) throw std::out_of_range("local_da_solve: slab index");
  const var::ThreeDVarProblem p3 = prob.config.threeD(k, Vector(prob.M() * u_prev));
  mps::MpsOptions opt = prob.mps;
  opt.workers = 1;
  mps::MpsResult r = mps::runMps(p3, prob.partition, opt);
  LocalSolve out;
  out.u = std::move(r.iterate.patched);
  out.residual = r.iterate.residual;
  out.sweeps = r.iterate.n;
  out.converged = r.converged;
  return out;
}

inline LocalSolve localDaSolve(std::size_t k, const PararealTrajectory & traj, const PararealProblem & prob) {
  return localDaSolve(k, traj.u.back().at(k - 1), prob);
}

/// Fine corrections of the last stored iteration, concurrently over slabs.
inline void fineCorrections(PararealTrajectory & traj, const PararealProblem & prob, std::size_t workers) {
  const std::size_t s = traj.slabs();
  const std::size_t n = traj.u.size() - 1;
  const int np = static_cast<int>(prob.config.instance.np);
  std::vector<LocalSolve> solves(s + 1);
  parallelFor(s, workers, [&](std::size_t t) {
    solves[t + 1] = localDaSolve(t + 1, traj.u[n][t], prob);
  });
  traj.fine.resize(n + 1);
  traj.delta.resize(n + 1);
  traj.mps_residual.resize(n + 1);
  traj.mps_sweeps.resize(n + 1);
  traj.mps_converged.resize(n + 1);
  traj.fine[n].assign(s + 1, Vector::Zero(np));
  traj.delta[n].assign(s + 1, Vector::Zero(np));
  traj.mps_residual[n].assign(s + 1, 0.0);
  traj.mps_sweeps[n].assign(s + 1, 0);
  traj.mps_converged[n].assign(s + 1, 1);
  for (std::size_t k = 1; k <= s; ++k) {
    traj.fine[n][k] = solves[k].u;
    traj.delta[n][k] = solves[k].u - prob.M() * traj.u[n][k - 1];
    traj.mps_residual[n][k] = solves[k].residual;
    traj.mps_sweeps[n][k] = solves[k].sweeps;
    traj.mps_converged[n][k] = solves[k].converged ? 1 : 0;
  }
}

/// Sequential predictor-corrector recombination producing iteration n + 1
/// from the fine corrections of iteration n.
inline void pararealUpdate(PararealTrajectory & traj, const Matrix & M,
                           CorrectorForm form = CorrectorForm::classical) {
  const std::size_t n = traj.u.size() - 1;
  if (traj.fine.size() != n + 1) throw std::logic_error("parareal_update: fine corrections missing");
  const std::size_t s = traj.slabs();
  std::vector<Vector> next(s + 1);
  std::vector<Vector> back(s + 1);
  next[0] = traj.u[n][0];
  back[0] = next[0];
  for (std::size_t k = 1; k <= s; ++k) {
    back[k] = M * next[k - 1];
    if (form == CorrectorForm::classical) {
      next[k] = back[k] + traj.delta[n][k];
    } else {
      next[k] = back[k] + traj.fine[n][k] - M * traj.u[n][k];
    }
  }
  traj.u.push_back(std::move(next));
  traj.background.push_back(std::move(back));
  traj.n = static_cast<int>(n + 1);
}

struct PararealStep {
  int n = 0;
  double update_norm = 0.0;       ///< max_k ||u_k^n - u_k^{n-1}||_inf
  double max_delta = 0.0;
  double max_mps_residual = 0.0;
  int max_mps_sweeps = 0;
  double wall_ms = 0.0;           ///< fine phase plus update
};

struct PararealResult {
  PararealTrajectory trajectory;
  std::vector<PararealStep> history;
  bool converged = false;
  bool mps_converged = true;
};

/// Alternates concurrent fine corrections and the sequential update until the
/// iterate change is below `tol`, or S iterations have been taken (after which
/// the classical scheme reproduces the serial fine chain), or `max_outer`.
inline PararealResult runParareal(const PararealProblem & prob, double tol, int max_outer,
                                  std::size_t workers = 1) {
  if (!(tol > 0.0)) throw std::invalid_argument("run_parareal: tol must be positive");
  if (max_outer < 1) throw std::invalid_argument("run_parareal: max_outer must be >= 1");
  prob.config.validate();

  PararealResult res;
  res.trajectory = initialTrajectory(prob);
  PararealTrajectory & traj = res.trajectory;
  const std::size_t s = prob.slabs();
  for (int it = 0; it < max_outer; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    fineCorrections(traj, prob, workers);
    pararealUpdate(traj, prob.M(), prob.form);
    const auto t1 = std::chrono::steady_clock::now();

    const std::size_t n = traj.u.size() - 1;
    PararealStep step;
    step.n = static_cast<int>(n);
    step.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    for (std::size_t k = 1; k <= s; ++k) {
      step.update_norm = std::max(step.update_norm, normInf(Vector(traj.u[n][k] - traj.u[n - 1][k])));
      step.max_delta = std::max(step.max_delta, normInf(traj.delta[n - 1][k]));
      step.max_mps_residual = std::max(step.max_mps_residual, traj.mps_residual[n - 1][k]);
      step.max_mps_sweeps = std::max(step.max_mps_sweeps, traj.mps_sweeps[n - 1][k]);
      res.mps_converged = res.mps_converged && traj.mps_converged[n - 1][k] != 0;
    }
    res.history.push_back(step);
    const bool exact = prob.form == CorrectorForm::classical && n >= s;
    if (step.update_norm <= tol || exact) {
      res.converged = true;
      break;
    }
  }
  return res;
}

/// Serial reference u_k = MPS(u_{k-1}), u_0 = u0.
inline std::vector<Vector> serialFineChain(const PararealProblem & prob) {
  std::vector<Vector> chain{prob.config.u0};
  for (std::size_t k = 1; k <= prob.slabs(); ++k) chain.push_back(localDaSolve(k, chain.back(), prob).u);
  return chain;
}

/// Same chain with every slab analysis from the direct 3D-Var solver.
inline std::vector<Vector> serialDirectChain(const PararealProblem & prob) {
  std::vector<Vector> chain{prob.config.u0};
  for (std::size_t k = 1; k <= prob.slabs(); ++k) {
    chain.push_back(var::solveVarDirect(prob.config.threeD(k, Vector(prob.M() * chain.back()))).u_da);
  }
  return chain;
}

}  // namespace ddda::parareal
