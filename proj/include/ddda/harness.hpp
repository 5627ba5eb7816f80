/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ddda/analysis.hpp"
#include "ddda/dd_mps.hpp"
#include "ddda/parareal.hpp"
#include "ddda/testbed.hpp"
#include "ddda/var_solver.hpp"

/// Experiment configuration, orchestration and report output.
namespace ddda::harness {

/// Raised for invalid configuration; `field` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string & what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string & field() const { return field_; }

 private:
  std::string field_;
};

enum class Format { csv, json };

struct ExperimentConfig {
  // testbed
  long np = 32;
  long slabs = 8;
  double T = 1.0;
  double velocity = 1.0;
  double diffusivity = 0.01;
  double sigma_b = 1.0;
  double sigma_r = 0.5;
  double L = 1.0;
  long nobs = 8;
  std::string obs_layout = "uniform";   // uniform | staggered
  bool noise = true;
  std::uint64_t seed = 42;
  // solvers
  long n_sub = 2;
  long overlap = 2;
  double rho_penalty = 1.0;
  double alpha = 1.0;
  double lambda = 1.0;
  double tol_mps = 1e-12;
  double tol_parareal = 1e-10;
  long max_sweeps = 500;
  long max_outer = 0;                   // 0: number of slabs
  std::string patch = "owner";          // owner | average
  // execution
  long workers = 1;
  std::string out;
  std::string format = "csv";           // csv | json
  bool record_timing = false;

  long effectiveMaxOuter() const { return max_outer > 0 ? max_outer : slabs; }
  Format outputFormat() const { return format == "json" ? Format::json : Format::csv; }

  /// Sets one key from its textual value; unknown keys are rejected.
  void set(const std::string & key, const std::string & value);
  void validate() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parseDouble(const std::string & key, const std::string & v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key, "expected a finite number, got '" + v + "'");
  return out;
}

inline long parseLong(const std::string & key, const std::string & v) {
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline bool parseBool(const std::string & key, const std::string & v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string & key, const std::string & raw) {
  using namespace detail;
  const std::string v = trim(raw);
  if (key == "np") np = parseLong(key, v);
  else if (key == "slabs") slabs = parseLong(key, v);
  else if (key == "n_steps") slabs = parseLong(key, v) - 1;
  else if (key == "T") T = parseDouble(key, v);
  else if (key == "velocity") velocity = parseDouble(key, v);
  else if (key == "diffusivity") diffusivity = parseDouble(key, v);
  else if (key == "sigma_b") sigma_b = parseDouble(key, v);
  else if (key == "sigma_r") sigma_r = parseDouble(key, v);
  else if (key == "L") L = parseDouble(key, v);
  else if (key == "nobs") nobs = parseLong(key, v);
  else if (key == "obs_layout") obs_layout = v;
  else if (key == "noise") noise = parseBool(key, v);
  else if (key == "seed") {
    const long s = parseLong(key, v);
    if (s < 0) throw ConfigError(key, "must be nonnegative");
    seed = static_cast<std::uint64_t>(s);
  }
  else if (key == "n_sub") n_sub = parseLong(key, v);
  else if (key == "overlap") overlap = parseLong(key, v);
  else if (key == "rho_penalty") rho_penalty = parseDouble(key, v);
  else if (key == "alpha") alpha = parseDouble(key, v);
  else if (key == "lambda") lambda = parseDouble(key, v);
  else if (key == "tol_mps") tol_mps = parseDouble(key, v);
  else if (key == "tol_parareal") tol_parareal = parseDouble(key, v);
  else if (key == "max_sweeps") max_sweeps = parseLong(key, v);
  else if (key == "max_outer") max_outer = parseLong(key, v);
  else if (key == "patch") patch = v;
  else if (key == "workers") workers = parseLong(key, v);
  else if (key == "out") out = v;
  else if (key == "format") format = v;
  else if (key == "record_timing") record_timing = parseBool(key, v);
  else throw ConfigError(key, "unknown configuration key");
}

inline void ExperimentConfig::validate() const {
  if (np < 2) throw ConfigError("np", "must be >= 2");
  if (slabs < 1) throw ConfigError("slabs", "must be >= 1");
  if (!(T > 0.0)) throw ConfigError("T", "must be positive");
  if (diffusivity < 0.0) throw ConfigError("diffusivity", "must be nonnegative");
  if (!(sigma_b > 0.0)) throw ConfigError("sigma_b", "must be positive");
  if (!(sigma_r > 0.0)) throw ConfigError("sigma_r", "must be positive");
  if (L < 0.0) throw ConfigError("L", "must be nonnegative");
  if (nobs < 0 || nobs >= np) throw ConfigError("nobs", "must satisfy 0 <= nobs < np");
  if (obs_layout != "uniform" && obs_layout != "staggered") throw ConfigError("obs_layout", "must be uniform or staggered");
  if (n_sub < 1 || n_sub > np) throw ConfigError("n_sub", "must be in [1, np]");
  if (overlap < 0 || overlap * (n_sub - 1) >= np) throw ConfigError("overlap", "infeasible for np and n_sub");
  try {
    (void)mps::partitionDomain(np, n_sub, overlap);
  } catch (const std::invalid_argument & e) {
    throw ConfigError("overlap", e.what());
  }
  if (rho_penalty < 0.0) throw ConfigError("rho_penalty", "must be nonnegative");
  if (!(alpha > 0.0)) throw ConfigError("alpha", "must be positive");
  if (!(lambda > 0.0)) throw ConfigError("lambda", "must be positive");
  if (!(tol_mps > 0.0)) throw ConfigError("tol_mps", "must be positive");
  if (!(tol_parareal > 0.0)) throw ConfigError("tol_parareal", "must be positive");
  if (max_sweeps < 1) throw ConfigError("max_sweeps", "must be >= 1");
  if (max_outer < 0) throw ConfigError("max_outer", "must be >= 0");
  if (patch != "owner" && patch != "average") throw ConfigError("patch", "must be owner or average");
  if (workers < 1) throw ConfigError("workers", "must be >= 1");
  if (format != "csv" && format != "json") throw ConfigError("format", "must be csv or json");
}

/// Flat `key = value` text; '#' starts a comment.
inline ExperimentConfig parseConfig(std::istream & in, ExperimentConfig cfg = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    cfg.set(detail::trim(std::string_view(t).substr(0, eq)), t.substr(eq + 1));
  }
  return cfg;
}

inline ExperimentConfig loadConfig(const std::string & path, ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  return parseConfig(in, std::move(cfg));
}

// -----------------------------------------------------------------------------
// Diagnostics
// -----------------------------------------------------------------------------

struct DiagnosticsRecord {
  int k = 0;
  int n = 0;
  double E_kn = 0.0;
  double delta_norm = 0.0;
  double c_n = 0.0;
  double mps_residual = 0.0;
  double mu_A = 0.0;
  double C_const = 0.0;
  double eps_mps = 0.0;
  double roundoff_total = 0.0;
  double roundoff_t1 = 0.0;
  double roundoff_t2 = 0.0;
  double roundoff_t3 = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char * kCsvHeader =
    "k,n,E_kn,delta_norm,c_n,mps_residual,mu_A,C_const,eps_mps,roundoff_total,roundoff_t1,roundoff_t2,"
    "roundoff_t3,wall_ms";

struct ExperimentSummary {
  bool parareal_converged = false;
  bool mps_converged = false;
  int outer_iterations = 0;
  int max_mps_sweeps = 0;
  bool bound_holds = false;
  double final_error = 0.0;         ///< max_k E_k at the last iterate
  double oracle_deviation = 0.0;    ///< max_k ||u_k^final - direct-chain_k||, relative
  double mu_A = 0.0;
  double C = 0.0;
  double C_lemma = 0.0;             ///< L ||delta|| / ||xi||
  double lipschitz_ratio = 0.0;
  double eps_mps = 0.0;
  double C_h = 0.0;
  double R_mu = 0.0;
  double prefactor = 0.0;
  double rho = 0.0;
};

struct ExperimentReport {
  std::string status;               ///< "converged" | "not_converged"
  std::vector<DiagnosticsRecord> records;
  ExperimentSummary summary;
};

inline parareal::PararealProblem makeProblem(const ExperimentConfig & cfg) {
  const Index np = cfg.np;
  const Index n_steps = cfg.slabs + 1;
  auto inst = testbed::buildModelInstance(np, n_steps, cfg.T, cfg.velocity, cfg.diffusivity);
  auto cov = testbed::buildCovariance(np, n_steps, cfg.nobs, cfg.sigma_b, cfg.sigma_r, cfg.L);
  const Vector truth = testbed::smoothTruth(np);
  const Vector u0 = testbed::perturbedBackground(truth, cov, cfg.seed);
  const auto layout = testbed::observationLayout(np, n_steps, cfg.nobs, cfg.obs_layout == "staggered");
  auto obs = testbed::buildObservations(inst, cov, layout, truth, cfg.seed, cfg.noise);
  auto G = testbed::assembleG(obs, inst);

  parareal::PararealProblem prob{
      var::VarProblemConfig{std::move(inst), std::move(cov), std::move(obs), std::move(G), u0, cfg.alpha, cfg.lambda},
      mps::partitionDomain(np, cfg.n_sub, cfg.overlap), mps::MpsOptions{}, parareal::CorrectorForm::classical};
  prob.mps.rho = cfg.rho_penalty;
  prob.mps.patch = cfg.patch == "average" ? mps::PatchRule::average : mps::PatchRule::owner;
  prob.mps.tol = cfg.tol_mps;
  prob.mps.max_iters = static_cast<int>(cfg.max_sweeps);
  return prob;
}

/// Builds the twin experiment, the serial reference, runs Parareal and
/// evaluates the bounds. Output depends only on the configuration.
inline ExperimentReport runExperiment(const ExperimentConfig & cfg) {
  cfg.validate();
  const parareal::PararealProblem prob = makeProblem(cfg);
  const auto & vc = prob.config;
  const Matrix & M = vc.instance.M;
  const std::size_t workers = static_cast<std::size_t>(cfg.workers);
  const int S = static_cast<int>(prob.slabs());

  const std::vector<Vector> reference = parareal::serialFineChain(prob);
  const std::vector<Vector> direct = parareal::serialDirectChain(prob);
  const double mu = var::hessianCondition(vc, var::Variant::fourD).mu;

  parareal::PararealResult run = parareal::runParareal(prob, cfg.tol_parareal,
                                                       static_cast<int>(cfg.effectiveMaxOuter()), workers);
  const auto & traj = run.trajectory;

  // Lipschitz probes: every (reference, iterate) pair plus seeded random pairs.
  std::vector<analysis::ProbePair> probes = analysis::trajectoryProbes(traj, reference);
  {
    std::mt19937_64 gen(cfg.seed + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int p = 0; p < 32; ++p) {
      Vector a(vc.instance.np), b(vc.instance.np);
      for (Index j = 0; j < a.size(); ++j) {
        a(j) = normal(gen);
        b(j) = normal(gen);
      }
      probes.emplace_back(std::move(a), std::move(b));
    }
  }
  const auto lip = analysis::lipschitzEstimate(M, mu, probes);

  Vector truth_traj = vc.observations.u_truth;
  double delta_err = 0.0;
  for (int k = 1; k <= S; ++k) {
    truth_traj = M * truth_traj;
    delta_err = std::max(delta_err, normInf(Vector(reference[static_cast<std::size_t>(k)] - truth_traj)));
  }
  const double xi = normInf(Vector(vc.u0 - vc.observations.u_truth));
  const double C_lemma = xi > 0.0 ? analysis::lemmaConstant(lip.L, delta_err, xi) : 0.0;
  const double C = std::max({C_lemma, lip.C, std::numeric_limits<double>::min()});

  const double C_h = analysis::baseCaseError(traj, reference, M);
  const double eps = analysis::mpsAccuracy(traj, prob);
  const auto bp = analysis::makeBoundParameters(C, mu, eps, S, vc.instance.h, vc.instance.p, C_h);
  auto hist = analysis::errorAndBoundHistory(traj, reference, bp);
  const auto ro = analysis::roundoffProfile(traj, M);
  hist.R_round = ro.global;
  hist.rho_local = ro.rho;

  ExperimentReport rep;
  for (std::size_t n = 0; n < traj.u.size(); ++n) {
    for (int k = 1; k <= S; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      DiagnosticsRecord r;
      r.k = k;
      r.n = static_cast<int>(n);
      r.E_kn = hist.E[n][ks];
      r.delta_norm = normInf(Vector(traj.u[n][ks] - traj.background[n][ks]));
      r.c_n = hist.c_bound[n];
      r.mps_residual = n > 0 ? traj.mps_residual[n - 1][ks] : 0.0;
      r.mu_A = mu;
      r.C_const = C;
      r.eps_mps = eps;
      const double R_prev = n > 0 ? ro.global[n - 1][ks - 1] : 0.0;
      const auto terms = analysis::roundoffBound(bp, R_prev, ro.global[n][0], ro.rho);
      r.roundoff_total = terms.total;
      r.roundoff_t1 = terms.initial;
      r.roundoff_t2 = terms.iteration;
      r.roundoff_t3 = terms.rho_term;
      r.wall_ms = (cfg.record_timing && n > 0) ? run.history[n - 1].wall_ms : 0.0;
      rep.records.push_back(r);
    }
  }

  auto & s = rep.summary;
  s.parareal_converged = run.converged;
  s.mps_converged = run.mps_converged;
  s.outer_iterations = traj.n;
  for (const auto & st : run.history) s.max_mps_sweeps = std::max(s.max_mps_sweeps, st.max_mps_sweeps);
  s.bound_holds = hist.boundHolds();
  for (double e : hist.E.back()) s.final_error = std::max(s.final_error, e);
  for (std::size_t k = 0; k < direct.size(); ++k)
    s.oracle_deviation = std::max(s.oracle_deviation, relativeErrorInf(traj.u.back()[k], direct[k]));
  s.mu_A = mu;
  s.C = C;
  s.C_lemma = C_lemma;
  s.lipschitz_ratio = lip.max_ratio;
  s.eps_mps = eps;
  s.C_h = C_h;
  s.R_mu = bp.R_mu;
  s.prefactor = bp.prefactor();
  s.rho = ro.rho;
  rep.status = (run.converged && run.mps_converged) ? "converged" : "not_converged";
  return rep;
}

// -----------------------------------------------------------------------------
// Report output
// -----------------------------------------------------------------------------

namespace detail {

inline std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void checkRecords(const std::vector<DiagnosticsRecord> & records) {
  if (records.empty()) throw std::invalid_argument("emit_report: no records");
  for (const auto & r : records) {
    for (double x : {r.E_kn, r.delta_norm, r.c_n, r.mps_residual, r.mu_A, r.C_const, r.eps_mps, r.roundoff_total,
                     r.roundoff_t1, r.roundoff_t2, r.roundoff_t3, r.wall_ms}) {
      if (!std::isfinite(x)) throw std::runtime_error("emit_report: non-finite value in record");
    }
  }
}

}  // namespace detail

inline void writeReport(std::ostream & os, const std::vector<DiagnosticsRecord> & records, Format format) {
  using detail::num;
  detail::checkRecords(records);
  if (format == Format::csv) {
    os << kCsvHeader << '\n';
    for (const auto & r : records) {
      os << r.k << ',' << r.n << ',' << num(r.E_kn) << ',' << num(r.delta_norm) << ',' << num(r.c_n) << ','
         << num(r.mps_residual) << ',' << num(r.mu_A) << ',' << num(r.C_const) << ',' << num(r.eps_mps) << ','
         << num(r.roundoff_total) << ',' << num(r.roundoff_t1) << ',' << num(r.roundoff_t2) << ','
         << num(r.roundoff_t3) << ',' << num(r.wall_ms) << '\n';
    }
    return;
  }
  os << "[\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto & r = records[i];
    os << "  {\"k\": " << r.k << ", \"n\": " << r.n << ", \"E_kn\": " << num(r.E_kn)
       << ", \"delta_norm\": " << num(r.delta_norm) << ", \"c_n\": " << num(r.c_n)
       << ", \"mps_residual\": " << num(r.mps_residual) << ", \"mu_A\": " << num(r.mu_A)
       << ", \"C_const\": " << num(r.C_const) << ", \"eps_mps\": " << num(r.eps_mps)
       << ", \"roundoff_total\": " << num(r.roundoff_total) << ", \"roundoff_t1\": " << num(r.roundoff_t1)
       << ", \"roundoff_t2\": " << num(r.roundoff_t2) << ", \"roundoff_t3\": " << num(r.roundoff_t3)
       << ", \"wall_ms\": " << num(r.wall_ms) << "}" << (i + 1 < records.size() ? "," : "") << '\n';
  }
  os << "]\n";
}

inline std::string reportString(const std::vector<DiagnosticsRecord> & records, Format format) {
  std::ostringstream os;
  writeReport(os, records, format);
  return os.str();
}

inline void emitReport(const std::vector<DiagnosticsRecord> & records, Format format, const std::string & path) {
  const std::string text = reportString(records, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_report: cannot write '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("emit_report: write to '" + path + "' failed");
}

}  // namespace ddda::harness
