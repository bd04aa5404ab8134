#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/design.hpp"
#include "erpreg/ols.hpp"
#include "erpreg/stats.hpp"
#include "erpreg/types.hpp"

namespace erpreg {

// One `(terms | group)` bar: a random intercept and/or a correlated random
// slope for a 2-level sum-coded factor.
struct RandomTerm {
  std::string group;
  bool intercept = true;
  std::string slope;  // empty = none; must name a 2-level factor

  int n_terms() const { return (intercept ? 1 : 0) + (slope.empty() ? 0 : 1); }
};

struct RandomSpec {
  std::vector<RandomTerm> terms;
};

// Parses `(1 + condition | subj) + (1 | item)`. `subj` is an alias for
// `subject`. Bars may drop the intercept with `0 + condition | g`.
RandomSpec parse_random(const std::string& spec);
std::string format_random(const RandomSpec& spec);

// Everything profiled_deviance needs, precomputed once: the fixed design, the
// random-effects model matrix Z (columns level-major per grouping factor), and
// the theta-independent cross products.
struct LmmProblem {
  DesignMatrix fixed;
  Eigen::VectorXd y;
  RandomSpec random;

  struct Group {
    std::string name;
    Factor levels;
    std::vector<std::string> term_names;  // "(Intercept)", "condition[S.x]"
    int n_terms = 0;
    int col_offset = 0;             // first Z column of this factor's block
    std::vector<int> level_of_row;  // n
    std::vector<double> slope_x;    // n; empty when no slope
  };
  std::vector<Group> groups;

  Eigen::MatrixXd ztz, ztx, xtx;
  Eigen::VectorXd zty, xty;
  double yty = 0.0;
  int n = 0, p = 0, q = 0;

  int n_theta() const;
  // True for components bound below by zero (Cholesky diagonals).
  std::vector<bool> theta_lower_bounded() const;
  Eigen::VectorXd theta_start() const;  // diagonals 1, off-diagonals 0
};

LmmProblem make_problem(const TrialTable& t, const ModelSpec& fixed,
                        const RandomSpec& random);

// Penalized least-squares solve at one theta.
struct PlsSolution {
  double deviance = 0.0;  // -2 profiled log-likelihood (ML)
  double r2 = 0.0;        // penalized residual sum of squares
  double logdet_a = 0.0;
  double sigma2 = 0.0;  // ML residual variance r2 / n
  Eigen::VectorXd beta;
  Eigen::VectorXd u;             // spherical random effects
  Eigen::MatrixXd cov_beta_v0;   // (X^T V0^{-1} X)^{-1}; scale by sigma2 for SEs
};

// -2 profiled log-likelihood: log|A| + n (1 + log(2 pi r2 / n)) with
// A = Lambda' Z'Z Lambda + I. Throws std::invalid_argument on a theta of the
// wrong size or with negative diagonal entries.
double profiled_deviance(const LmmProblem& prob, const Eigen::VectorXd& theta);
PlsSolution solve_pls(const LmmProblem& prob, const Eigen::VectorXd& theta);

struct ConvergenceReport {
  int n_evaluations = 0;
  double final_spread = 0.0;  // deviance spread across the final simplex
  bool converged = false;
  bool boundary = false;  // some variance component fitted at (numerical) zero
  std::vector<std::string> notes;
};

struct FittedLMM {
  // Fixed effects.
  Eigen::VectorXd beta, se, tval;
  std::vector<std::string> names;

  // Variance components per grouping factor.
  struct GroupEffects {
    std::string group;
    std::vector<std::string> term_names;
    int n_levels = 0;
    Eigen::MatrixXd cov;   // absolute covariance sigma^2 T T'
    std::vector<double> sd;
    Eigen::MatrixXd corr;  // identity diagonal; 0 where an sd is 0
  };
  std::vector<GroupEffects> groups;

  double sigma = 0.0;  // residual SD (ML)
  Eigen::VectorXd theta;
  double loglik = 0.0, deviance = 0.0, aic = 0.0, bic = 0.0;
  int n_obs = 0, p_fixed = 0, n_theta = 0;
  int df_residual() const { return n_obs - (p_fixed + n_theta + 1); }

  std::string fixed_formula;
  std::string random_formula;
  ConvergenceReport convergence;

  int coef_index(const std::string& name) const;
};

// Simplex search gave up after max_evaluations; carries the best fit found.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, FittedLMM best)
      : std::runtime_error(what), best_fit(std::move(best)) {}
  FittedLMM best_fit;
};

// ML fit by Nelder-Mead over theta (deterministic start, bound clamping,
// convergence when a full simplex cycle improves the deviance by < 1e-8).
// Throws NonConvergenceError after 10^4 deviance evaluations.
FittedLMM fit_lmm(const TrialTable& t, const ModelSpec& fixed,
                  const RandomSpec& random);

struct LrtResult {
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
};

// Likelihood-ratio test of ML fits; `nested`'s fixed and random terms must be
// subsets of `full`'s, on the same observations.
LrtResult lrt(const FittedLMM& nested, const FittedLMM& full);

// Symmetric normal-quantile intervals beta +/- z_(1+level)/2 * SE.
std::vector<Interval> wald_intervals(const FittedLMM& m, double level);
std::vector<Interval> wald_intervals(const FittedGLM& m, double level);

InformationCriteria information_criteria(const FittedLMM& m);

// lme4-flavoured plain-text block: criteria, variance components, fixed
// effects with t values (no p values).
std::string summary_text(const FittedLMM& m);

// Full fit as JSON (coefficients, variance components, criteria, convergence).
void write_fit_json(const FittedLMM& m, const std::string& path);

}  // namespace erpreg
