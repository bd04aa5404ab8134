#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/lmm.hpp"
#include "erpreg/stats.hpp"
#include "erpreg/synth.hpp"

namespace erpreg {

// One Monte Carlo power estimate: simulate-refit tallies for a target term.
struct PowerResult {
  std::string strategy;  // model / baseline-handling label
  std::string term;      // target coefficient
  std::string test;      // "t" (|t| >= 2) or "lrt" (chi-square at alpha .05)
  int n_sim = 0;
  int n_significant = 0;
  int n_failures = 0;  // refits that failed; counted as non-significant
  double power = 0.0;
  Interval ci;  // Clopper-Pearson 95%, brackets `power`
  std::uint64_t seed = 0;
  // Mean AIC of the fitted full model over successful replicates (NaN if none).
  double mean_aic = std::numeric_limits<double>::quiet_NaN();
};

// Parametric simulation from a fitted mixed model on its own design rows:
// per grouping factor, each level's effects are drawn from the fitted
// covariance (sigma * T * z with z standard normal), then the fixed-effect
// predictor and i.i.d. Gaussian residuals are added. All draws come from one
// engine seeded by (seed, 0): group effects in group/level/term order, then
// residuals in row order. With all variance components and the residual SD at
// zero the result is exactly X beta.
Eigen::VectorXd simulate_response(const LmmProblem& prob, const FittedLMM& m,
                                  std::uint64_t seed);

// Simulate-refit power for one fixed-effect coefficient of a mixed model.
// `m` is the generating model and must have been fitted to (or constructed
// for) the design described by `t`, `fixed`, `random`; editing its beta/theta/
// sigma before the call simulates from a specified rather than estimated
// model. test: "t" declares significance when |t| >= 2 (one fit per
// replicate); "lrt" drops `term`'s formula term from the fixed spec and uses
// the chi-square likelihood-ratio test at alpha = .05 (two fits). Replicate
// i's data depends only on (seed, i), so results are identical for any
// worker count. A replicate whose refit fails to converge counts as
// non-significant and increments n_failures. Requires n_sim >= 100.
PowerResult power_estimate(const TrialTable& t, const ModelSpec& fixed,
                           const RandomSpec& random, const FittedLMM& m,
                           const std::string& term, const std::string& test,
                           int n_sim, std::uint64_t seed, int n_threads = 0);

// Convenience overload: fits the generating model itself.
PowerResult power_estimate(const TrialTable& t, const ModelSpec& fixed,
                           const RandomSpec& random, const std::string& term,
                           const std::string& test, int n_sim,
                           std::uint64_t seed, int n_threads = 0);

// Compares baseline-handling strategies on synthetic data with common random
// numbers: replicate i generates one table from (seed, i) and every strategy
// analyses that same table. Strategies:
//   "none"        fit uv ~ condition on the raw window means
//   "traditional" subtract the baseline feature, then fit uv ~ condition
//   "regression"  fit uv ~ baseline + condition
// The target term is the condition contrast (the config must have exactly two
// conditions). Tests as in power_estimate. Requires n_sim >= 100.
std::vector<PowerResult> power_compare(const SynthConfig& c,
                                       const std::vector<std::string>& strategies,
                                       const std::string& test, int n_sim,
                                       std::uint64_t seed, int n_threads = 0);

// Long CSV `strategy,term,power,lo,hi,n_sim,aic`, one row per result.
void write_power_csv(const std::vector<PowerResult>& results,
                     const std::string& path);

}  // namespace erpreg
