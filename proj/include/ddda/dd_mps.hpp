/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddda/common.hpp"
#include "ddda/var_solver.hpp"

/// Overlapping Schwarz solver for the 3D-Var problem in control space.
///
/// With u = u_b + V w (B = V V^T) the 3D-Var functional becomes
///   1/2 lambda w^T w + 1/2 (H V w - d)^T R^{-1} (H V w - d),   d = v - H u_b.
/// The grid is split into overlapping index blocks Omega_i. Subdomain i
/// minimizes this functional over its own controls w_i, with the controls it
/// does not hold frozen at the values of their owners, plus an interface
/// penalty rho/2 ||w_i|Gamma_ij - w_j|Gamma_ij||^2. Setting the local gradient
/// to zero gives
///   A_i w_i^{n+1} = c_i - sum_{j != i} A_ij w_j^n,
/// solved for all i concurrently (additive sweep). The penalty vanishes when
/// neighbours agree, so the global 3D-Var minimizer is a fixed point.
namespace ddda::mps {

// -----------------------------------------------------------------------------
// Decomposition
// -----------------------------------------------------------------------------

/// Gamma_ij = (boundary of Omega_i) intersected with Omega_j.
struct Interface {
  Index i = 0;
  Index j = 0;
  IndexList points;
};

/// Offsets for an adjacent pair: s_ij = r_i - C_ij, s_bar_ij = s_ij + t_ij.
struct AdjacentPair {
  Index i = 0;
  Index j = 0;
  Index C = 0;        ///< |Omega_i intersect Omega_j|
  Index t = 0;        ///< |Gamma_ij|
  Index s = 0;
  Index s_bar = 0;
};

struct SubdomainPartition {
  Index np = 0;
  Index n_sub = 0;
  Index overlap = 0;
  std::vector<IndexList> index_sets;     ///< contiguous, ascending
  std::vector<Interface> interfaces;     ///< every ordered pair with nonempty Gamma_ij
  std::vector<AdjacentPair> adjacent;    ///< (i, i+1) and (i+1, i)
  std::vector<Index> owner;              ///< lowest-index subdomain containing each point

  Index size(Index i) const { return static_cast<Index>(index_sets.at(static_cast<std::size_t>(i)).size()); }
  Index first(Index i) const { return index_sets.at(static_cast<std::size_t>(i)).front(); }
  Index last(Index i) const { return index_sets.at(static_cast<std::size_t>(i)).back(); }
  bool contains(Index i, Index x) const { return x >= first(i) && x <= last(i); }
  /// Position of grid point x inside Omega_i.
  Index local(Index i, Index x) const { return x - first(i); }

  const Interface * interface(Index i, Index j) const {
    for (const auto & g : interfaces) {
      if (g.i == i && g.j == j) return &g;
    }
    return nullptr;
  }
};

/// Balanced contiguous blocks, widened so that neighbouring blocks share
/// exactly `overlap` points (ceil(overlap/2) to the right, floor to the left).
inline SubdomainPartition partitionDomain(Index np, Index n_sub, Index overlap) {
  if (n_sub < 1) throw std::invalid_argument("partition_domain: n_sub must be >= 1");
  if (overlap < 0) throw std::invalid_argument("partition_domain: overlap must be nonnegative");
  if (n_sub > np) throw std::invalid_argument("partition_domain: more subdomains than grid points");
  if (overlap * (n_sub - 1) >= np) throw std::invalid_argument("partition_domain: infeasible overlap");

  SubdomainPartition p;
  p.np = np;
  p.n_sub = n_sub;
  p.overlap = overlap;

  const Index base = np / n_sub;
  const Index extra = np % n_sub;
  const Index grow_right = (overlap + 1) / 2;
  const Index grow_left = overlap / 2;
  Index start = 0;
  for (Index i = 0; i < n_sub; ++i) {
    const Index len = base + (i < extra ? 1 : 0);
    Index lo = start;
    Index hi = start + len - 1;
    if (i > 0) lo -= grow_left;
    if (i < n_sub - 1) hi += grow_right;
    lo = std::max<Index>(lo, 0);
    hi = std::min<Index>(hi, np - 1);
    IndexList set;
    for (Index x = lo; x <= hi; ++x) set.push_back(x);
    p.index_sets.push_back(std::move(set));
    start += len;
  }

  for (Index i = 0; i + 1 < n_sub; ++i) {
    const Index shared = p.last(i) - p.first(i + 1) + 1;
    if (shared != overlap) throw std::invalid_argument("partition_domain: infeasible overlap");
  }

  p.owner.assign(static_cast<std::size_t>(np), -1);
  for (Index i = n_sub - 1; i >= 0; --i) {
    for (Index x : p.index_sets[static_cast<std::size_t>(i)]) p.owner[static_cast<std::size_t>(x)] = i;
  }

  for (Index i = 0; i < n_sub; ++i) {
    IndexList boundary;
    if (p.first(i) > 0) boundary.push_back(p.first(i));
    if (p.last(i) < np - 1 && p.last(i) != p.first(i)) boundary.push_back(p.last(i));
    for (Index j = 0; j < n_sub; ++j) {
      if (j == i) continue;
      Interface g{i, j, {}};
      for (Index x : boundary) {
        if (p.contains(j, x)) g.points.push_back(x);
      }
      if (!g.points.empty()) p.interfaces.push_back(std::move(g));
    }
  }

  for (Index i = 0; i < n_sub; ++i) {
    for (Index j : {i - 1, i + 1}) {
      if (j < 0 || j >= n_sub) continue;
      AdjacentPair a;
      a.i = i;
      a.j = j;
      a.C = std::max<Index>(0, std::min(p.last(i), p.last(j)) - std::max(p.first(i), p.first(j)) + 1);
      const Interface * g = p.interface(i, j);
      a.t = g ? static_cast<Index>(g->points.size()) : 0;
      a.s = p.size(i) - a.C;
      a.s_bar = a.s + a.t;
      p.adjacent.push_back(a);
    }
  }
  return p;
}

// -----------------------------------------------------------------------------
/// Restriction R_i (to Omega_i) and R_ij (to Gamma_ij) as index maps; the
/// extensions are their transposes.
struct RestrictionOperators {
  Index np = 0;
  std::vector<IndexList> subdomain;
  std::vector<Interface> interface;

  Vector restrict(Index i, const Vector & x) const { return gather(x, subdomain.at(static_cast<std::size_t>(i))); }
  Vector extend(Index i, const Vector & xi) const {
    Vector x = Vector::Zero(np);
    const auto & idx = subdomain.at(static_cast<std::size_t>(i));
    for (std::size_t r = 0; r < idx.size(); ++r) x(idx[r]) = xi(static_cast<Index>(r));
    return x;
  }
  Vector restrictInterface(Index i, Index j, const Vector & x) const {
    for (const auto & g : interface) {
      if (g.i == i && g.j == j) return gather(x, g.points);
    }
    return Vector(0);
  }
  Matrix denseSubdomain(Index i) const { return selectionMatrix(subdomain.at(static_cast<std::size_t>(i)), np); }
  Matrix denseInterface(Index i, Index j) const {
    for (const auto & g : interface) {
      if (g.i == i && g.j == j) return selectionMatrix(g.points, np);
    }
    return Matrix(0, np);
  }
};

inline RestrictionOperators buildRestrictions(const SubdomainPartition & p) {
  if (static_cast<Index>(p.index_sets.size()) != p.n_sub || p.np < 1)
    throw std::invalid_argument("build_restrictions: malformed partition");
  return RestrictionOperators{p.np, p.index_sets, p.interfaces};
}

// -----------------------------------------------------------------------------
// Local systems
// -----------------------------------------------------------------------------

/// Contribution of neighbour j to subdomain i's right-hand side.
struct Coupling {
  Index j = 0;
  Matrix A_ij;                 ///< r_i x r_j
  IndexList exterior_global;   ///< points outside Omega_i owned by j
  IndexList exterior_local;    ///< ... and their positions in Omega_j
  Matrix obs_exterior;         ///< H V restricted to exterior_global columns
  IndexList gamma_i;           ///< Gamma_ij positions in Omega_i
  IndexList gamma_j;           ///< Gamma_ij positions in Omega_j
};

struct LocalSystem {
  Index i = 0;
  Matrix A;                    ///< A_i^MPS, SPD
  Vector c;
  std::vector<Coupling> coupling;
  Eigen::LLT<Matrix> factor;
  Matrix obs_local;            ///< H V R_i^T (observation response to local controls)
  Vector innovation;           ///< d = v - H u_b
  double obs_variance = 1.0;
  double lambda = 1.0;
  double rho = 1.0;
  Matrix state_rows;           ///< R_i V, maps a global control to the state on Omega_i
  Vector background;           ///< R_i u_b

  Index size() const { return A.rows(); }
};

inline LocalSystem assembleLocalSystem(Index i, const SubdomainPartition & part,
                                       const RestrictionOperators & restr,
                                       const var::ThreeDVarProblem & prob, double rho) {
  if (i < 0 || i >= part.n_sub) throw std::out_of_range("assemble_local_system: subdomain index");
  if (prob.np() != part.np) throw std::invalid_argument("assemble_local_system: problem and partition disagree on NP");
  if (!(prob.obs_variance > 0.0)) throw std::invalid_argument("assemble_local_system: singular R");
  if (rho < 0.0) throw std::invalid_argument("assemble_local_system: rho must be nonnegative");
  const auto & omega = restr.subdomain.at(static_cast<std::size_t>(i));
  if (omega.empty()) throw std::invalid_argument("assemble_local_system: empty subdomain");

  const Index ri = static_cast<Index>(omega.size());
  const Matrix hv = gatherRows(prob.V, prob.obs_indices);   // H V, m x NP
  const double w = 1.0 / prob.obs_variance;

  LocalSystem s;
  s.i = i;
  s.rho = rho;
  s.lambda = prob.lambda;
  s.obs_variance = prob.obs_variance;
  s.innovation = prob.innovation();
  s.obs_local = gatherCols(hv, omega);
  s.state_rows = gatherRows(prob.V, omega);
  s.background = gather(prob.background, omega);

  s.A = prob.lambda * Matrix::Identity(ri, ri) + w * (s.obs_local.transpose() * s.obs_local);
  s.c = w * (s.obs_local.transpose() * s.innovation);

  for (Index j = 0; j < part.n_sub; ++j) {
    if (j == i) continue;
    Coupling cp;
    cp.j = j;
    cp.A_ij = Matrix::Zero(ri, part.size(j));
    for (Index x = 0; x < part.np; ++x) {
      if (part.owner[static_cast<std::size_t>(x)] == j && !part.contains(i, x)) {
        cp.exterior_global.push_back(x);
        cp.exterior_local.push_back(part.local(j, x));
      }
    }
    cp.obs_exterior = gatherCols(hv, cp.exterior_global);
    const Matrix cross = w * (s.obs_local.transpose() * cp.obs_exterior);
    for (std::size_t e = 0; e < cp.exterior_local.size(); ++e) {
      cp.A_ij.col(cp.exterior_local[e]) += cross.col(static_cast<Index>(e));
    }
    if (const Interface * g = part.interface(i, j)) {
      for (Index x : g->points) {
        const Index a = part.local(i, x);
        const Index b = part.local(j, x);
        cp.gamma_i.push_back(a);
        cp.gamma_j.push_back(b);
        s.A(a, a) += rho;
        cp.A_ij(a, b) -= rho;
      }
    }
    s.coupling.push_back(std::move(cp));
  }
  s.A = 0.5 * (s.A + s.A.transpose());
  s.factor.compute(s.A);
  if (s.factor.info() != Eigen::Success)
    throw std::runtime_error("assemble_local_system: local matrix is not positive definite");
  return s;
}

inline std::vector<LocalSystem> assembleAll(const SubdomainPartition & part, const var::ThreeDVarProblem & prob,
                                            double rho, std::size_t workers = 1) {
  const RestrictionOperators restr = buildRestrictions(part);
  std::vector<LocalSystem> systems(static_cast<std::size_t>(part.n_sub));
  parallelFor(systems.size(), workers, [&](std::size_t i) {
    systems[i] = assembleLocalSystem(static_cast<Index>(i), part, restr, prob, rho);
  });
  return systems;
}

// -----------------------------------------------------------------------------
// Local functional (control space, neighbours frozen)
// -----------------------------------------------------------------------------

namespace detail {

inline Vector observedState(const LocalSystem & s, const Vector & wi, const std::vector<Vector> & w) {
  Vector hvw = s.obs_local * wi;
  for (const auto & cp : s.coupling) {
    if (!cp.exterior_local.empty())
      hvw += cp.obs_exterior * gather(w[static_cast<std::size_t>(cp.j)], cp.exterior_local);
  }
  return hvw;
}

}  // namespace detail

/// J_i(w_i) with every other subdomain's controls taken from `w`.
inline double localCost(const LocalSystem & s, const Vector & wi, const std::vector<Vector> & w) {
  const Vector misfit = detail::observedState(s, wi, w) - s.innovation;
  double penalty = 0.0;
  for (const auto & cp : s.coupling) {
    for (std::size_t g = 0; g < cp.gamma_i.size(); ++g) {
      const double diff = wi(cp.gamma_i[g]) - w[static_cast<std::size_t>(cp.j)](cp.gamma_j[g]);
      penalty += diff * diff;
    }
  }
  return 0.5 * s.lambda * wi.squaredNorm() + 0.5 * misfit.squaredNorm() / s.obs_variance + 0.5 * s.rho * penalty;
}

/// Gradient of J_i: A_i w_i - c_i + sum_j A_ij w_j.
inline Vector localGradient(const LocalSystem & s, const Vector & wi, const std::vector<Vector> & w) {
  Vector g = s.A * wi - s.c;
  for (const auto & cp : s.coupling) g += cp.A_ij * w[static_cast<std::size_t>(cp.j)];
  return g;
}

// -----------------------------------------------------------------------------
// Schwarz iteration
// -----------------------------------------------------------------------------

enum class PatchRule { owner, average };

struct SchwarzIterate {
  std::vector<Vector> w;
  int n = 0;
  double residual = 0.0;     ///< max_i ||w_i^n - w_i^{n-1}||_inf
  Vector patched;            ///< global analysis from the patching rule
};

inline SchwarzIterate zeroIterate(const std::vector<LocalSystem> & systems) {
  SchwarzIterate it;
  for (const auto & s : systems) it.w.push_back(Vector::Zero(s.size()));
  return it;
}

/// One additive sweep: every subdomain reads only iteration-n data.
inline SchwarzIterate mpsSweep(const SchwarzIterate & it, const std::vector<LocalSystem> & systems,
                               std::size_t workers = 1) {
  if (it.w.size() != systems.size()) throw std::invalid_argument("mps_sweep: iterate and systems disagree");
  SchwarzIterate next;
  next.n = it.n + 1;
  next.w.resize(systems.size());
  std::vector<double> change(systems.size(), 0.0);
  parallelFor(systems.size(), workers, [&](std::size_t i) {
    const LocalSystem & s = systems[i];
    Vector rhs = s.c;
    for (const auto & cp : s.coupling) rhs -= cp.A_ij * it.w[static_cast<std::size_t>(cp.j)];
    Vector wi = s.factor.solve(rhs);
    if (!wi.allFinite()) throw std::runtime_error("mps_sweep: local solve failed");
    change[i] = normInf(Vector(wi - it.w[i]));
    next.w[i] = std::move(wi);
  });
  next.residual = *std::max_element(change.begin(), change.end());
  next.patched = it.patched;
  return next;
}

/// Local states u_i = R_i (u_b + V w~), w~ being the global control seen by
/// subdomain i, patched into one global vector.
inline Vector recoverAndPatch(const SchwarzIterate & it, const SubdomainPartition & part,
                              const std::vector<LocalSystem> & systems, PatchRule rule = PatchRule::owner) {
  const std::size_t nsub = systems.size();
  std::vector<Vector> local(nsub);
  for (std::size_t i = 0; i < nsub; ++i) {
    const LocalSystem & s = systems[i];
    Vector wg = Vector::Zero(part.np);
    const auto & omega = part.index_sets[i];
    for (std::size_t r = 0; r < omega.size(); ++r) wg(omega[r]) = it.w[i](static_cast<Index>(r));
    for (const auto & cp : s.coupling) {
      for (std::size_t e = 0; e < cp.exterior_global.size(); ++e)
        wg(cp.exterior_global[e]) = it.w[static_cast<std::size_t>(cp.j)](cp.exterior_local[e]);
    }
    local[i] = s.background + s.state_rows * wg;
  }

  Vector u = Vector::Zero(part.np);
  if (rule == PatchRule::owner) {
    for (Index x = 0; x < part.np; ++x) {
      const Index o = part.owner[static_cast<std::size_t>(x)];
      u(x) = local[static_cast<std::size_t>(o)](part.local(o, x));
    }
  } else {
    Vector count = Vector::Zero(part.np);
    for (std::size_t i = 0; i < nsub; ++i) {
      const auto & omega = part.index_sets[i];
      for (std::size_t r = 0; r < omega.size(); ++r) {
        u(omega[r]) += local[i](static_cast<Index>(r));
        count(omega[r]) += 1.0;
      }
    }
    u = u.cwiseQuotient(count);
  }
  return u;
}

struct MpsOptions {
  double rho = 1.0;
  PatchRule patch = PatchRule::owner;
  double tol = 1e-12;
  int max_iters = 500;
  std::size_t workers = 1;
};

struct MpsStep {
  double residual = 0.0;
  double cost = 0.0;
};

struct MpsResult {
  SchwarzIterate iterate;
  std::vector<MpsStep> history;
  bool converged = false;
  std::vector<LocalSystem> systems;
};

/// Repeats additive sweeps from `w_init` (zero when empty) until the update is
/// below `tol`. Without any coupling one sweep is exact.
inline MpsResult runMps(const var::ThreeDVarProblem & prob, const SubdomainPartition & part,
                        const MpsOptions & opt, const std::vector<Vector> & w_init = {}) {
  if (!(opt.tol > 0.0)) throw std::invalid_argument("run_mps: tol must be positive");
  if (opt.max_iters < 1) throw std::invalid_argument("run_mps: max_iters must be >= 1");

  MpsResult res;
  res.systems = assembleAll(part, prob, opt.rho, opt.workers);
  SchwarzIterate it = zeroIterate(res.systems);
  if (!w_init.empty()) {
    if (w_init.size() != it.w.size()) throw std::invalid_argument("run_mps: w_init has wrong subdomain count");
    for (std::size_t i = 0; i < it.w.size(); ++i) {
      if (w_init[i].size() != it.w[i].size()) throw std::invalid_argument("run_mps: w_init block has wrong size");
      it.w[i] = w_init[i];
    }
  }
  bool coupled = false;
  for (const auto & s : res.systems) {
    for (const auto & cp : s.coupling) coupled = coupled || !cp.A_ij.isZero(0.0);
  }

  for (int k = 0; k < opt.max_iters; ++k) {
    it = mpsSweep(it, res.systems, opt.workers);
    it.patched = recoverAndPatch(it, part, res.systems, opt.patch);
    res.history.push_back({it.residual, var::evalCost(it.patched, prob)});
    if (it.residual <= opt.tol || !coupled) {
      res.converged = true;
      break;
    }
  }
  res.iterate = std::move(it);
  return res;
}

/// Largest relative residual of the local systems A_i w_i = c_i - sum_j A_ij w_j.
inline double systemResidual(const SchwarzIterate & it, const std::vector<LocalSystem> & systems) {
  double worst = 0.0;
  for (std::size_t i = 0; i < systems.size(); ++i) {
    const LocalSystem & s = systems[i];
    Vector rhs = s.c;
    for (const auto & cp : s.coupling) rhs -= cp.A_ij * it.w[static_cast<std::size_t>(cp.j)];
    const double scale = std::max({normInf(rhs), normInf(Vector(s.A * it.w[i])), 1e-300});
    worst = std::max(worst, normInf(Vector(s.A * it.w[i] - rhs)) / scale);
  }
  return worst;
}

}  // namespace ddda::mps
