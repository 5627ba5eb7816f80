/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <random>

#include "ddda/parareal.hpp"
#include "ddda/testbed.hpp"
#include "ddda/var_solver.hpp"

namespace fixtures {

using namespace ddda;

struct Instance {
  Index np = 32;
  Index n_steps = 9;
  Index nobs = 8;
  double L = 1.0;
  double sigma_b = 1.0;
  double sigma_r = 0.5;
  double velocity = 1.0;
  double diffusivity = 0.01;
  double alpha = 1.0;
  double lambda = 1.0;
  bool staggered = false;
  bool noise = true;
  std::uint64_t seed = 42;
};

inline var::VarProblemConfig makeConfig(const Instance & s = {}) {
  auto inst = testbed::buildModelInstance(s.np, s.n_steps, 1.0, s.velocity, s.diffusivity);
  auto cov = testbed::buildCovariance(s.np, s.n_steps, s.nobs, s.sigma_b, s.sigma_r, s.L);
  const Vector truth = testbed::smoothTruth(s.np);
  const Vector u0 = testbed::perturbedBackground(truth, cov, s.seed);
  auto obs = testbed::buildObservations(inst, cov, testbed::observationLayout(s.np, s.n_steps, s.nobs, s.staggered),
                                        truth, s.seed, s.noise);
  auto G = testbed::assembleG(obs, inst);
  return var::VarProblemConfig{std::move(inst), std::move(cov), std::move(obs), std::move(G), u0, s.alpha, s.lambda};
}

inline parareal::PararealProblem makeParareal(const Instance & s, Index n_sub, Index overlap, double rho = 1.0) {
  parareal::PararealProblem p{makeConfig(s), mps::partitionDomain(s.np, n_sub, overlap), mps::MpsOptions{},
                              parareal::CorrectorForm::classical};
  p.mps.rho = rho;
  return p;
}

inline Vector randomVector(Index n, std::mt19937_64 & gen, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = d(gen);
  return v;
}

inline double relErr(const Vector & x, const Vector & ref) {
  return (x - ref).cwiseAbs().maxCoeff() / std::max(ref.cwiseAbs().maxCoeff(), 1e-300);
}

}  // namespace fixtures
