/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddda/common.hpp"

/// Synthetic twin-experiment problems: a 1-D periodic advection-diffusion
/// forecast model, Gaussian error statistics and seeded observations.
namespace ddda::testbed {

// -----------------------------------------------------------------------------
/// Discrete forecasting model on a periodic grid of `np` points over [0, T].
struct ModelInstance {
  Index np = 0;
  Index n_steps = 0;          ///< number of time points N
  double T = 0.0;
  double h = 0.0;             ///< time step T / (N - 1)
  std::vector<double> time_grid;
  Matrix M;                   ///< one-step propagator, time independent
  int p = 1;                  ///< order of the time discretization
  double velocity = 0.0;
  double diffusivity = 0.0;
};

/// Background (B = V V^T) and observation (R) error covariances.
struct CovarianceFactorPair {
  Matrix B;
  Matrix V;                   ///< lower-triangular Cholesky factor of B
  Matrix R;                   ///< (N nobs) x (N nobs), diagonal
  double sigma_b = 0.0;
  double sigma_r = 0.0;
  double L = 0.0;             ///< correlation length in grid units
};

struct ObservationSet {
  Index nobs = 0;                       ///< nominal observations per time
  std::vector<IndexList> obs_indices;   ///< per time t_k, the observed grid points
  std::vector<Vector> v;                ///< per time observation vectors
  std::uint64_t seed = 0;
  Vector u_truth;

  /// Dense H_k (rows are unit coordinate vectors).
  Matrix H(std::size_t k, Index np) const { return selectionMatrix(obs_indices.at(k), np); }
  Index totalCount() const {
    Index n = 0;
    for (const auto & idx : obs_indices) n += static_cast<Index>(idx.size());
    return n;
  }
};

struct BlockObservationOperator {
  Matrix G;                   ///< block diagonal, (sum_k m_k) x (NP N)
};

// -----------------------------------------------------------------------------
// Model
// -----------------------------------------------------------------------------

/// Implicit first-order upwind advection with centred diffusion on the unit
/// periodic interval: (I + h (a D_up - nu D_2)) u^{k+1} = u^k, M = (...)^{-1}.
/// The implicit operator is an M-matrix with unit row sums, so M is
/// nonnegative with ||M||_inf = 1 for every h.
inline ModelInstance buildModelInstance(Index np, Index n_steps, double T,
                                        double velocity, double diffusivity) {
  if (np < 2) throw std::invalid_argument("build_model_instance: np must be >= 2");
  if (n_steps < 2) throw std::invalid_argument("build_model_instance: n_steps must be >= 2");
  if (!(T > 0.0)) throw std::invalid_argument("build_model_instance: T must be positive");
  if (diffusivity < 0.0) throw std::invalid_argument("build_model_instance: negative diffusivity");
  if (!std::isfinite(velocity) || !std::isfinite(diffusivity))
    throw std::invalid_argument("build_model_instance: non-finite coefficients");

  ModelInstance m;
  m.np = np;
  m.n_steps = n_steps;
  m.T = T;
  m.h = T / static_cast<double>(n_steps - 1);
  m.velocity = velocity;
  m.diffusivity = diffusivity;
  m.p = 1;
  m.time_grid.resize(static_cast<std::size_t>(n_steps));
  for (Index k = 0; k < n_steps; ++k) m.time_grid[static_cast<std::size_t>(k)] = static_cast<double>(k) * m.h;
  m.time_grid.back() = T;

  const double dx = 1.0 / static_cast<double>(np);
  const double c = std::abs(velocity) * m.h / dx;
  const double d = diffusivity * m.h / (dx * dx);

  Matrix a = Matrix::Identity(np, np);
  for (Index j = 0; j < np; ++j) {
    const Index left = (j + np - 1) % np;
    const Index right = (j + 1) % np;
    a(j, j) += c + 2.0 * d;
    a(j, left) -= d;
    a(j, right) -= d;
    if (velocity >= 0.0) {
      a(j, left) -= c;
    } else {
      a(j, right) -= c;
    }
  }
  if (c == 0.0 && d == 0.0) {
    m.M = Matrix::Identity(np, np);
  } else {
    m.M = a.partialPivLu().solve(Matrix::Identity(np, np));
  }
  return m;
}

// -----------------------------------------------------------------------------
// Covariances
// -----------------------------------------------------------------------------

/// Squared-exponential background covariance over grid-index distance plus a
/// diagonal jitter of 1e-10 sigma_b^2 (omitted when L = 0, where B is already
/// sigma_b^2 I). R = sigma_r^2 I over all (N nobs) observations.
inline CovarianceFactorPair buildCovariance(Index np, Index n_steps, Index nobs,
                                            double sigma_b, double sigma_r, double L) {
  if (np < 1 || n_steps < 1 || nobs < 0) throw std::invalid_argument("build_covariance: bad dimensions");
  if (!(sigma_b > 0.0)) throw std::invalid_argument("build_covariance: sigma_b must be positive");
  if (!(sigma_r > 0.0)) throw std::invalid_argument("build_covariance: sigma_r must be positive");
  if (!(L >= 0.0)) throw std::invalid_argument("build_covariance: L must be nonnegative");

  CovarianceFactorPair cp;
  cp.sigma_b = sigma_b;
  cp.sigma_r = sigma_r;
  cp.L = L;
  const double var_b = sigma_b * sigma_b;

  cp.B = Matrix::Zero(np, np);
  if (L == 0.0) {
    cp.B.diagonal().setConstant(var_b);
    cp.V = Matrix::Identity(np, np) * sigma_b;
  } else {
    for (Index j = 0; j < np; ++j) {
      cp.B(j, j) = var_b * (1.0 + 1e-10);
      for (Index l = 0; l < j; ++l) {
        const double dist = static_cast<double>(j - l);
        const double val = var_b * std::exp(-dist * dist / (2.0 * L * L));
        cp.B(j, l) = val;
        cp.B(l, j) = val;
      }
    }
    Eigen::LLT<Matrix> llt(cp.B);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("build_covariance: Cholesky factorization of B failed");
    cp.V = llt.matrixL();
  }
  const Index nr = n_steps * nobs;
  cp.R = Matrix::Identity(nr, nr) * (sigma_r * sigma_r);
  return cp;
}

// -----------------------------------------------------------------------------
// Observations
// -----------------------------------------------------------------------------

/// M^k applied to u for k = 0..N-1.
inline std::vector<Vector> propagate(const ModelInstance & inst, const Vector & u0) {
  std::vector<Vector> traj;
  traj.reserve(static_cast<std::size_t>(inst.n_steps));
  traj.push_back(u0);
  for (Index k = 1; k < inst.n_steps; ++k) traj.push_back(inst.M * traj.back());
  return traj;
}

/// v_k = H_k M^k u_truth + eta_k, eta_k ~ N(0, sigma_r^2) i.i.d. drawn from a
/// generator seeded with `seed`. `add_noise = false` gives exact observations.
inline ObservationSet buildObservations(const ModelInstance & inst, const CovarianceFactorPair & cov,
                                        const std::vector<IndexList> & obs_indices,
                                        const Vector & u_truth, std::uint64_t seed,
                                        bool add_noise = true) {
  if (static_cast<Index>(obs_indices.size()) != inst.n_steps)
    throw std::invalid_argument("build_observations: need one index list per time point");
  if (u_truth.size() != inst.np) throw std::invalid_argument("build_observations: u_truth has wrong length");

  ObservationSet obs;
  obs.seed = seed;
  obs.u_truth = u_truth;
  obs.obs_indices = obs_indices;
  for (const auto & idx : obs_indices) {
    if (static_cast<Index>(idx.size()) >= inst.np)
      throw std::invalid_argument("build_observations: nobs must be smaller than NP");
    for (Index j : idx) {
      if (j < 0 || j >= inst.np) throw std::out_of_range("build_observations: observation index out of range");
    }
    obs.nobs = std::max(obs.nobs, static_cast<Index>(idx.size()));
  }

  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, cov.sigma_r);
  const auto traj = propagate(inst, u_truth);
  obs.v.reserve(obs_indices.size());
  for (std::size_t k = 0; k < obs_indices.size(); ++k) {
    Vector vk = gather(traj[k], obs_indices[k]);
    if (add_noise) {
      for (Index r = 0; r < vk.size(); ++r) vk(r) += noise(gen);
    }
    obs.v.push_back(std::move(vk));
  }
  return obs;
}

/// `nobs` evenly spaced grid points; `staggered` shifts the layout by one
/// point per time level.
inline std::vector<IndexList> observationLayout(Index np, Index n_steps, Index nobs, bool staggered) {
  if (nobs < 0 || nobs >= np) throw std::invalid_argument("observation layout: need 0 <= nobs < np");
  std::vector<IndexList> layout(static_cast<std::size_t>(n_steps));
  for (Index k = 0; k < n_steps; ++k) {
    IndexList idx;
    const Index shift = staggered ? k : 0;
    for (Index r = 0; r < nobs; ++r) {
      const Index base = (r * np) / nobs + np / (2 * nobs);
      idx.push_back((base + shift) % np);
    }
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    layout[static_cast<std::size_t>(k)] = std::move(idx);
  }
  return layout;
}

// -----------------------------------------------------------------------------
// Space-time observation operator
// -----------------------------------------------------------------------------

/// G = diag[H_0, H_1 M, ..., H_{N-1} M]; G = H_0 when N = 1.
inline BlockObservationOperator assembleG(const ObservationSet & obs, const ModelInstance & inst) {
  const Index n = static_cast<Index>(obs.obs_indices.size());
  if (n < 1) throw std::invalid_argument("assemble_G: no time levels");
  if (inst.M.rows() != inst.np || inst.M.cols() != inst.np)
    throw std::invalid_argument("assemble_G: M is not NP x NP");

  BlockObservationOperator g;
  g.G = Matrix::Zero(obs.totalCount(), inst.np * n);
  Index row = 0;
  for (Index k = 0; k < n; ++k) {
    const auto & idx = obs.obs_indices[static_cast<std::size_t>(k)];
    for (Index j : idx) {
      if (j < 0 || j >= inst.np) throw std::invalid_argument("assemble_G: H_k does not conform to M");
    }
    const Index m = static_cast<Index>(idx.size());
    if (m == 0) continue;
    Matrix block = (k == 0) ? selectionMatrix(idx, inst.np) : gatherRows(inst.M, idx);
    g.G.block(row, k * inst.np, m, inst.np) = block;
    row += m;
  }
  return g;
}

// -----------------------------------------------------------------------------
// Twin experiment states
// -----------------------------------------------------------------------------

/// Smooth periodic truth: a Gaussian bump on a gentle sine wave.
inline Vector smoothTruth(Index np) {
  Vector u(np);
  for (Index j = 0; j < np; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(np);
    u(j) = std::sin(2.0 * std::numbers::pi * x) + 2.0 * std::exp(-std::pow((x - 0.35) / 0.08, 2));
  }
  return u;
}

/// Background = truth + V z with z ~ N(0, I), so background errors follow B.
inline Vector perturbedBackground(const Vector & truth, const CovarianceFactorPair & cov, std::uint64_t seed) {
  std::mt19937_64 gen(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(truth.size());
  for (Index j = 0; j < z.size(); ++j) z(j) = normal(gen);
  return truth + cov.V * z;
}

}  // namespace ddda::testbed
