#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/design.hpp"
#include "erpreg/types.hpp"

namespace erpreg {

// Prior for one regression coefficient.
struct Prior {
  enum class Kind { normal, student_t };
  Kind kind = Kind::normal;
  double df = 3.0;  // student_t only
  double location = 0.0;
  double scale = 2.0;  // sd for normal, scale for student_t

  double logpdf(double x) const;
  double sample(std::mt19937_64& engine) const;
};

Prior normal_prior(double mean, double sd);
Prior student_t_prior(double df, double location, double scale);
// StudentT variance = scale^2 * df / (df - 2); needs df > 2.
Prior student_t_prior_with_variance(double df, double location, double variance);

// Priors for a fixed-effects Gaussian linear model: one prior per coefficient
// (by design-column name, falling back to `fallback`) and a half-Student-t
// prior on the residual SD.
struct PriorSpec {
  std::map<std::string, Prior> coefficients;
  Prior fallback = normal_prior(0.0, 2.0);
  double residual_df = 3.0;
  double residual_scale = 10.0;

  const Prior& for_coefficient(const std::string& name) const;
  void validate() const;  // throws std::invalid_argument
};

// Log posterior density of the fixed-effects Gaussian model at
// params = [coefficients..., log(residual SD)]: Gaussian log-likelihood plus
// log prior densities plus the log-scale Jacobian for the SD. Coefficients
// live in the parameterization of the design's stored columns (the default
// model spec applies centering but no sd-scaling, so they coincide with
// reported GLM coefficients). With zero observations the result is the log
// prior alone. May return a non-finite value; never throws for finite inputs
// of the right shape.
double log_posterior(const Eigen::VectorXd& params, const DesignMatrix& d,
                     const Eigen::VectorXd& y, const PriorSpec& priors);

struct PosteriorSamples {
  std::vector<std::string> names;  // coefficients..., then "sigma"
  int n_chains = 0;
  int n_warmup = 0;
  int n_iter = 0;  // post-warmup draws per chain

  // Per chain: n_iter x n_params. The residual SD is stored as sigma, not
  // log sigma.
  std::vector<Eigen::MatrixXd> draws;

  // Split-chain rank-normalized diagnostics, per parameter.
  std::vector<double> rhat;
  std::vector<double> ess;
  // Post-warmup acceptance rate per [chain][parameter].
  std::vector<std::vector<double>> acceptance;

  bool converged = true;  // false when any rhat exceeds 1.05
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;

  int index(const std::string& name) const;  // -1 if absent
  std::vector<double> pooled(int param) const;
  std::vector<double> pooled(const std::string& name) const;
};

// Componentwise random-walk Metropolis with per-parameter proposal scales
// adapted toward 0.25-0.45 acceptance during warmup and frozen afterwards.
// Chains start from jittered prior draws and run concurrently; chain c's
// stream depends only on (seed, c). Non-finite posterior values reject the
// proposal. Requires n_chains >= 2 (the diagnostics need it), n_iter >= 1,
// n_warmup >= 0. A fit with any rhat > 1.05 is returned with converged =
// false and a warning per offending parameter, not thrown.
PosteriorSamples sample_posterior(const DesignMatrix& d, const Eigen::VectorXd& y,
                                  const PriorSpec& priors, int n_chains,
                                  int n_warmup, int n_iter, std::uint64_t seed,
                                  int n_threads = 0);

// Convenience: builds the design from the table and spec, takes the response
// from the table's value column.
PosteriorSamples sample_posterior(const TrialTable& t, const ModelSpec& spec,
                                  const PriorSpec& priors, int n_chains,
                                  int n_warmup, int n_iter, std::uint64_t seed,
                                  int n_threads = 0);

// Split-chain rank-normalized potential scale reduction factor and bulk
// effective sample size. Chains are truncated to the shortest length, split
// in half, ranked with midranks over the pooled draws, mapped through the
// normal quantile, and the classic formulas run on the transformed chains.
// Requires at least one chain of length >= 4.
double split_rhat(const std::vector<std::vector<double>>& chains);
double split_ess(const std::vector<std::vector<double>>& chains);

// Argmax of a Gaussian kernel density estimate (Silverman bandwidth) over a
// 512-point grid spanning the draws.
double posterior_mode(const std::vector<double>& draws);

// Long CSV `chain,iter,param,value`; chain and iter are 1-based, iter
// counting post-warmup draws only.
void write_draws_csv(const PosteriorSamples& s, const std::string& path);

// Long CSV `param,value,prior,posterior` with per-curve peak normalized to 1:
// for each parameter, prior density (closed form) and posterior density (KDE)
// on a shared grid covering both.
void write_density_csv(const PosteriorSamples& s, const PriorSpec& priors,
                       const std::string& path);

}  // namespace erpreg
