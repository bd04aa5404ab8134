#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/design.hpp"
#include "erpreg/epochs.hpp"
#include "erpreg/types.hpp"

namespace erpreg {

// Ordinary least squares fit. Coefficients are reported in the centered,
// unscaled parameterization (sd-scaling applied during fitting is undone).
struct FittedGLM {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::VectorXd tval;        // beta / se
  Eigen::VectorXd residuals;
  Eigen::MatrixXd xtx_inv;     // (X^T X)^{-1} in the reported parameterization
  double rss = 0.0;
  double sigma2 = 0.0;         // RSS / (n - p)
  double loglik = 0.0;         // Gaussian, ML variance RSS/n
  double aic = 0.0;            // -2 logLik + 2 (p+1)
  double bic = 0.0;            // -2 logLik + log(n) (p+1)
  int n_obs = 0;
  int p = 0;
  std::vector<std::string> names;
  bool variance_floored = false;  // ML variance hit the 1e-300 guard

  int coef_index(const std::string& name) const;  // -1 if absent
};

// Solves min ||y - X b|| by column-pivoted QR. scale_divisors, when provided
// (one per column), back-transforms coefficients fitted on sd-scaled columns.
// Throws std::invalid_argument when n <= p and std::runtime_error on rank
// deficiency.
FittedGLM fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  std::vector<std::string> names = {},
                  const std::vector<double>& scale_divisors = {});

// Builds the design from the table and spec, takes the response from the
// table's value column, and fits.
FittedGLM fit_ols(const TrialTable& t, const ModelSpec& spec);
FittedGLM fit_ols(const TrialTable& t, const DesignMatrix& d);

struct InformationCriteria {
  double loglik = 0.0;
  double deviance = 0.0;  // -2 logLik
  double aic = 0.0;
  double bic = 0.0;
};

InformationCriteria information_criteria(const FittedGLM& m);

// Per-(channel, sample) GLM fits over an EpochSet: the mass-univariate engine.
struct PointwiseResult {
  std::vector<std::string> channels;
  SamplingInfo sampling;
  std::vector<std::string> names;         // coefficient names, shared by cells
  std::vector<Eigen::MatrixXd> coef;      // per coefficient: channels x samples
  std::vector<Eigen::MatrixXd> se;
  ModelSpec spec;
  std::vector<DesignColumn> columns;      // shared column recipes
  Factor condition;                       // resolved condition factor, if used
  bool has_condition = false;
  std::vector<std::map<std::string, double>> covariate_center;  // per channel
};

// Fits spec at every (channel, sample) cell, using each trial's baseline-window
// mean on that channel as the `baseline` covariate. Only `baseline` and
// `condition` may appear in the spec; topography is handled by iterating
// channels. Deterministic for any worker count.
PointwiseResult pointwise_fit(const EpochSet& e, const ModelSpec& spec,
                              const TimeWindow& baseline_window, int n_threads = 0);

// Model-predicted waveform for one condition with the baseline covariate at
// its centered mean (zero): the regression-corrected waveform.
Eigen::MatrixXd corrected_waveform(const PointwiseResult& r,
                                   const std::string& condition_level);

// Removes the fitted baseline contribution from every trial: subtracts each
// baseline-involving column's (design value x coefficient) at every cell.
// This is the single-trial counterpart of corrected_waveform.
EpochSet apply_regression(const EpochSet& e, const ModelSpec& spec,
                          const TimeWindow& baseline_window, int n_threads = 0);

// Long CSV `channel,time_ms,term,estimate,se`.
void write_pointwise_csv(const PointwiseResult& r, const std::string& path);

}  // namespace erpreg
