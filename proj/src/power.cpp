#include "erpreg/power.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "erpreg/design.hpp"
#include "erpreg/ols.hpp"
#include "erpreg/parallel.hpp"
#include "erpreg/rng.hpp"

namespace erpreg {

namespace {

void check_test(const std::string& test) {
  if (test != "t" && test != "lrt")
    throw std::invalid_argument("unknown significance test '" + test +
                                "' (expected \"t\" or \"lrt\")");
}

void check_n_sim(int n_sim) {
  if (n_sim < 100) throw std::invalid_argument("n_sim must be at least 100");
}

Eigen::MatrixXd theta_block(const Eigen::VectorXd& theta, int offset, int d) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(d, d);
  int idx = offset;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) t(i, j) = theta[idx++];
  return t;
}

// Removes the formula term that generated coefficient `coef` (matched through
// the design column's ingredients) from a copy of `fixed`.
ModelSpec drop_term_of(const ModelSpec& fixed, const DesignMatrix& d,
                       const std::string& coef) {
  int col = -1;
  for (int j = 0; j < d.p(); ++j)
    if (d.names[static_cast<std::size_t>(j)] == coef) col = j;
  if (col < 0)
    throw std::invalid_argument("term '" + coef +
                                "' is not a fixed-effect coefficient");

  ModelSpec nested = fixed;
  const DesignColumn& column = d.columns[static_cast<std::size_t>(col)];
  if (column.parts.empty()) {  // the intercept column
    nested.intercept = false;
    return nested;
  }
  std::vector<std::string> want;
  for (const auto& part : column.parts) want.push_back(part.name);
  std::sort(want.begin(), want.end());
  for (auto it = nested.terms.begin(); it != nested.terms.end(); ++it) {
    std::vector<std::string> names = *it;
    std::sort(names.begin(), names.end());
    if (names == want) {
      nested.terms.erase(it);
      return nested;
    }
  }
  throw std::logic_error("design column '" + coef + "' matches no model term");
}

PowerResult tally(std::string strategy, std::string term, std::string test,
                  int n_sim, std::uint64_t seed,
                  const std::vector<std::uint8_t>& significant,
                  const std::vector<std::uint8_t>& failed,
                  const std::vector<double>& aic) {
  PowerResult r;
  r.strategy = std::move(strategy);
  r.term = std::move(term);
  r.test = std::move(test);
  r.n_sim = n_sim;
  r.seed = seed;
  double aic_sum = 0.0;
  int n_aic = 0;
  for (int i = 0; i < n_sim; ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (significant[u]) ++r.n_significant;
    if (failed[u]) ++r.n_failures;
    if (std::isfinite(aic[u])) {
      aic_sum += aic[u];
      ++n_aic;
    }
  }
  r.power = static_cast<double>(r.n_significant) / n_sim;
  r.ci = clopper_pearson(r.n_significant, n_sim, 0.95);
  if (n_aic > 0) r.mean_aic = aic_sum / n_aic;
  return r;
}

// The sum-contrast coefficient of a two-level condition factor.
std::string condition_coef_name(const DesignMatrix& d) {
  std::string found;
  for (std::size_t j = 0; j < d.columns.size(); ++j) {
    const DesignColumn& c = d.columns[j];
    if (c.parts.size() == 1 && !c.parts[0].is_covariate &&
        c.parts[0].name == "condition") {
      if (!found.empty())
        throw std::invalid_argument(
            "power_compare needs exactly two conditions");
      found = d.names[j];
    }
  }
  if (found.empty())
    throw std::logic_error("no condition column in the strategy design");
  return found;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_or_empty(double v) {
  return std::isfinite(v) ? fmt_double(v) : std::string();
}

}  // namespace

Eigen::VectorXd simulate_response(const LmmProblem& prob, const FittedLMM& m,
                                  std::uint64_t seed) {
  if (m.beta.size() != prob.p || m.theta.size() != prob.n_theta() ||
      m.groups.size() != prob.groups.size())
    throw std::invalid_argument(
        "fitted model does not match the problem's design");

  // Fixed part in the stored (possibly sd-scaled) parameterization.
  Eigen::VectorXd beta_stored(prob.p);
  for (int j = 0; j < prob.p; ++j)
    beta_stored[j] =
        m.beta[j] * prob.fixed.columns[static_cast<std::size_t>(j)].scale_divisor;
  Eigen::VectorXd y = prob.fixed.X * beta_stored;

  std::mt19937_64 engine = make_engine(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Group effects: b_level = sigma * T * z, added through the same per-row
  // entries Z would carry (intercept 1, slope = the contrast value).
  int t_off = 0;
  for (const auto& g : prob.groups) {
    const int d = g.n_terms;
    const Eigen::MatrixXd t = theta_block(m.theta, t_off, d);
    t_off += d * (d + 1) / 2;
    const int n_levels = static_cast<int>(g.levels.levels.size());
    Eigen::MatrixXd b(d, n_levels);
    for (int l = 0; l < n_levels; ++l) {
      Eigen::VectorXd z(d);
      for (int k = 0; k < d; ++k) z[k] = normal(engine);
      b.col(l) = m.sigma * (t * z);
    }
    for (int i = 0; i < prob.n; ++i) {
      const int level = g.level_of_row[static_cast<std::size_t>(i)];
      for (int k = 0; k < d; ++k) {
        const double x = g.term_names[static_cast<std::size_t>(k)] == "(Intercept)"
                             ? 1.0
                             : g.slope_x[static_cast<std::size_t>(i)];
        y[i] += b(k, level) * x;
      }
    }
  }

  for (int i = 0; i < prob.n; ++i) y[i] += m.sigma * normal(engine);
  return y;
}

PowerResult power_estimate(const TrialTable& t, const ModelSpec& fixed,
                           const RandomSpec& random, const FittedLMM& m,
                           const std::string& term, const std::string& test,
                           int n_sim, std::uint64_t seed, int n_threads) {
  check_test(test);
  check_n_sim(n_sim);
  const LmmProblem prob = make_problem(t, fixed, random);
  int coef = -1;
  for (int j = 0; j < prob.p; ++j)
    if (prob.fixed.names[static_cast<std::size_t>(j)] == term) coef = j;
  if (coef < 0)
    throw std::invalid_argument("term '" + term +
                                "' is not a fixed-effect coefficient");
  ModelSpec nested_fixed;
  if (test == "lrt") nested_fixed = drop_term_of(fixed, prob.fixed, term);

  std::vector<std::uint8_t> significant(static_cast<std::size_t>(n_sim), 0);
  std::vector<std::uint8_t> failed(static_cast<std::size_t>(n_sim), 0);
  std::vector<double> aic(static_cast<std::size_t>(n_sim),
                          std::numeric_limits<double>::quiet_NaN());
  parallel_for(
      static_cast<std::size_t>(n_sim),
      [&](std::size_t i) {
        const Eigen::VectorXd y = simulate_response(prob, m, derive_seed(seed, i));
        TrialTable ti = t;
        ti.value.assign(y.data(), y.data() + y.size());
        try {
          const FittedLMM full = fit_lmm(ti, fixed, random);
          if (test == "t") {
            const double tv = full.tval[coef];
            significant[i] = std::isfinite(tv) && std::abs(tv) >= 2.0;
          } else {
            const FittedLMM sub = fit_lmm(ti, nested_fixed, random);
            significant[i] = lrt(sub, full).p < 0.05;
          }
          aic[i] = full.aic;
        } catch (const std::runtime_error&) {
          // Non-convergence (or an LRT inversion caused by one): count the
          // replicate as non-significant rather than biasing power upward.
          failed[i] = 1;
        }
      },
      n_threads);
  return tally("lmm", term, test, n_sim, seed, significant, failed, aic);
}

PowerResult power_estimate(const TrialTable& t, const ModelSpec& fixed,
                           const RandomSpec& random, const std::string& term,
                           const std::string& test, int n_sim,
                           std::uint64_t seed, int n_threads) {
  const FittedLMM m = fit_lmm(t, fixed, random);
  return power_estimate(t, fixed, random, m, term, test, n_sim, seed, n_threads);
}

std::vector<PowerResult> power_compare(const SynthConfig& c,
                                       const std::vector<std::string>& strategies,
                                       const std::string& test, int n_sim,
                                       std::uint64_t seed, int n_threads) {
  check_test(test);
  check_n_sim(n_sim);
  c.validate();
  if (c.conditions.size() != 2)
    throw std::invalid_argument("power_compare needs exactly two conditions");
  if (strategies.empty())
    throw std::invalid_argument("no strategies to compare");
  for (const auto& s : strategies)
    if (s != "none" && s != "traditional" && s != "regression")
      throw std::invalid_argument("unknown strategy '" + s + "'");

  const ModelSpec cond_only = parse_formula("uv ~ condition");
  const ModelSpec with_baseline = parse_formula("uv ~ baseline + condition");
  const ModelSpec intercept_only = parse_formula("uv ~ 1");
  const ModelSpec baseline_only = parse_formula("uv ~ baseline");

  // Resolve the target coefficient's name once; every replicate reproduces the
  // same design metadata because only the response changes.
  const std::string term = condition_coef_name(
      build_design(generate_table(c, derive_seed(seed, 0)).table, cond_only));

  const std::size_t n_strategies = strategies.size();
  std::vector<std::vector<std::uint8_t>> significant(
      n_strategies, std::vector<std::uint8_t>(static_cast<std::size_t>(n_sim), 0));
  std::vector<std::vector<double>> aic(
      n_strategies,
      std::vector<double>(static_cast<std::size_t>(n_sim),
                          std::numeric_limits<double>::quiet_NaN()));

  parallel_for(
      static_cast<std::size_t>(n_sim),
      [&](std::size_t i) {
        // Common random numbers: all strategies see the same dataset.
        const SynthTable st = generate_table(c, derive_seed(seed, i));
        for (std::size_t k = 0; k < n_strategies; ++k) {
          const bool regression = strategies[k] == "regression";
          TrialTable tbl = st.table;
          if (strategies[k] == "traditional") {
            const std::vector<double>& b = tbl.covariates.at("baseline");
            for (std::size_t r = 0; r < tbl.value.size(); ++r)
              tbl.value[r] -= b[r];
          }
          const FittedGLM full =
              fit_ols(tbl, regression ? with_baseline : cond_only);
          const int coef = full.coef_index(term);
          if (test == "t") {
            significant[k][i] = std::abs(full.tval[coef]) >= 2.0;
          } else {
            const FittedGLM sub =
                fit_ols(tbl, regression ? baseline_only : intercept_only);
            const double chi2 = std::max(
                0.0, information_criteria(sub).deviance -
                         information_criteria(full).deviance);
            significant[k][i] =
                chi_squared_sf(chi2, full.p - sub.p) < 0.05;
          }
          aic[k][i] = full.aic;
        }
      },
      n_threads);

  std::vector<PowerResult> results;
  const std::vector<std::uint8_t> no_failures(static_cast<std::size_t>(n_sim), 0);
  for (std::size_t k = 0; k < n_strategies; ++k)
    results.push_back(tally(strategies[k], term, test, n_sim, seed,
                            significant[k], no_failures, aic[k]));
  return results;
}

void write_power_csv(const std::vector<PowerResult>& results,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "strategy,term,power,lo,hi,n_sim,aic\n";
  for (const PowerResult& r : results)
    out << r.strategy << ',' << r.term << ',' << fmt_double(r.power) << ','
        << fmt_double(r.ci.lo) << ',' << fmt_double(r.ci.hi) << ',' << r.n_sim
        << ',' << fmt_or_empty(r.mean_aic) << '\n';
}

}  // namespace erpreg
