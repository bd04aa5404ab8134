#include "erpreg/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include <Eigen/Cholesky>
#include <json.hpp>

namespace erpreg {

namespace {

std::string trim(std::string s) {
  const auto from = s.find_first_not_of(" \t");
  const auto to = s.find_last_not_of(" \t");
  if (from == std::string::npos) return "";
  return s.substr(from, to - from + 1);
}

// Splits on '+' at parenthesis depth zero.
std::vector<std::string> split_bars(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == '+' && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

const std::vector<std::string>* column_for(const TrialTable& t, const std::string& name) {
  if (name == "subject" || name == "subj") return &t.subject;
  if (name == "item") return &t.item;
  if (name == "condition") return &t.condition;
  if (name == t.unit_kind) return &t.unit;
  return nullptr;
}

// Lower-triangular relative-Cholesky block for one grouping factor, read from
// theta in column-major lower-triangle order: (1,1), (2,1), (2,2).
Eigen::MatrixXd cholesky_block(const Eigen::VectorXd& theta, int offset, int d) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(d, d);
  int idx = offset;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) t(i, j) = theta[idx++];
  return t;
}

}  // namespace

RandomSpec parse_random(const std::string& spec) {
  RandomSpec out;
  std::set<std::string> seen_groups;
  for (const std::string& raw : split_bars(spec)) {
    const std::string chunk = trim(raw);
    if (chunk.empty())
      throw std::invalid_argument("empty random-effects term in '" + spec + "'");
    if (chunk.front() != '(' || chunk.back() != ')')
      throw std::invalid_argument("random-effects term must be parenthesised: '" +
                                  chunk + "'");
    const std::string inner = chunk.substr(1, chunk.size() - 2);
    const auto bar = inner.find('|');
    if (bar == std::string::npos || inner.find('|', bar + 1) != std::string::npos)
      throw std::invalid_argument("expected exactly one '|' in '" + chunk + "'");

    RandomTerm term;
    term.group = trim(inner.substr(bar + 1));
    if (term.group.empty())
      throw std::invalid_argument("missing grouping factor in '" + chunk + "'");
    if (!seen_groups.insert(term.group).second)
      throw std::invalid_argument("grouping factor '" + term.group +
                                  "' appears in more than one term");

    bool saw_one = false;
    for (const std::string& tok_raw : split_bars(inner.substr(0, bar))) {
      const std::string tok = trim(tok_raw);
      if (tok.empty())
        throw std::invalid_argument("empty term on the left of '|' in '" + chunk + "'");
      if (tok == "1") {
        saw_one = true;
      } else if (tok == "0" || tok == "-1") {
        term.intercept = false;
      } else if (term.slope.empty()) {
        term.slope = tok;
      } else {
        throw std::invalid_argument("at most one random slope per term: '" + chunk + "'");
      }
    }
    (void)saw_one;
    if (term.n_terms() == 0)
      throw std::invalid_argument("random-effects term '" + chunk + "' has no effects");
    out.terms.push_back(std::move(term));
  }
  if (out.terms.empty()) throw std::invalid_argument("empty random-effects spec");
  return out;
}

std::string format_random(const RandomSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.terms.size(); ++i) {
    const RandomTerm& t = spec.terms[i];
    if (i > 0) out += " + ";
    out += "(";
    out += t.intercept ? "1" : "0";
    if (!t.slope.empty()) out += " + " + t.slope;
    out += " | " + t.group + ")";
  }
  return out;
}

int LmmProblem::n_theta() const {
  int k = 0;
  for (const auto& g : groups) k += g.n_terms * (g.n_terms + 1) / 2;
  return k;
}

std::vector<bool> LmmProblem::theta_lower_bounded() const {
  std::vector<bool> out;
  for (const auto& g : groups)
    for (int j = 0; j < g.n_terms; ++j)
      for (int i = j; i < g.n_terms; ++i) out.push_back(i == j);
  return out;
}

Eigen::VectorXd LmmProblem::theta_start() const {
  const auto bounded = theta_lower_bounded();
  Eigen::VectorXd t(static_cast<Eigen::Index>(bounded.size()));
  for (std::size_t i = 0; i < bounded.size(); ++i) t[static_cast<Eigen::Index>(i)] = bounded[i] ? 1.0 : 0.0;
  return t;
}

LmmProblem make_problem(const TrialTable& t, const ModelSpec& fixed,
                        const RandomSpec& random) {
  LmmProblem prob;
  prob.fixed = build_design(t, fixed);
  prob.random = random;
  prob.n = static_cast<int>(t.n_rows());
  prob.p = prob.fixed.p();
  if (prob.n <= prob.p)
    throw std::invalid_argument("need more observations than fixed-effect parameters");

  prob.y.resize(prob.n);
  for (int i = 0; i < prob.n; ++i) prob.y[i] = t.value[static_cast<std::size_t>(i)];

  int offset = 0;
  for (const RandomTerm& term : random.terms) {
    const auto* col = column_for(t, term.group);
    if (col == nullptr)
      throw std::invalid_argument("unknown grouping factor '" + term.group + "'");

    LmmProblem::Group g;
    g.name = term.group;
    g.levels = make_factor(term.group, *col);
    g.n_terms = term.n_terms();
    g.col_offset = offset;
    g.level_of_row.resize(static_cast<std::size_t>(prob.n));
    for (int i = 0; i < prob.n; ++i)
      g.level_of_row[static_cast<std::size_t>(i)] =
          g.levels.level_index((*col)[static_cast<std::size_t>(i)]);

    if (term.intercept) g.term_names.push_back("(Intercept)");
    if (!term.slope.empty()) {
      const auto* slope_col = column_for(t, term.slope);
      if (slope_col == nullptr)
        throw std::invalid_argument("random slope '" + term.slope +
                                    "' is not a categorical column");
      Factor sf;
      if (const Factor* from_fixed = prob.fixed.factor(term.slope)) {
        sf = *from_fixed;
      } else {
        const auto order = fixed.level_order.find(term.slope);
        sf = make_factor(term.slope, *slope_col,
                         order == fixed.level_order.end() ? std::vector<std::string>{}
                                                         : order->second);
      }
      if (sf.levels.size() != 2)
        throw std::invalid_argument("random slopes require a 2-level factor; '" +
                                    term.slope + "' has " +
                                    std::to_string(sf.levels.size()) + " levels");
      const Eigen::MatrixXd s = sum_code(sf);
      g.term_names.push_back(term.slope + "[S." + sf.levels[0] + "]");
      g.slope_x.resize(static_cast<std::size_t>(prob.n));
      for (int i = 0; i < prob.n; ++i) {
        const int li = sf.level_index((*slope_col)[static_cast<std::size_t>(i)]);
        g.slope_x[static_cast<std::size_t>(i)] = s(li, 0);
      }
    }

    offset += g.n_terms * static_cast<int>(g.levels.levels.size());
    prob.groups.push_back(std::move(g));
  }
  prob.q = offset;

  // Cross products, accumulated row by row; Z has at most two non-zero entries
  // per row and grouping factor, so it is never materialised.
  prob.ztz = Eigen::MatrixXd::Zero(prob.q, prob.q);
  prob.ztx = Eigen::MatrixXd::Zero(prob.q, prob.p);
  prob.zty = Eigen::VectorXd::Zero(prob.q);
  prob.xtx = prob.fixed.X.transpose() * prob.fixed.X;
  prob.xty = prob.fixed.X.transpose() * prob.y;
  prob.yty = prob.y.squaredNorm();

  std::vector<std::pair<int, double>> entries;
  for (int i = 0; i < prob.n; ++i) {
    entries.clear();
    for (const auto& g : prob.groups) {
      const int base = g.col_offset + g.level_of_row[static_cast<std::size_t>(i)] * g.n_terms;
      int at = base;
      const bool has_intercept =
          !g.term_names.empty() && g.term_names.front() == "(Intercept)";
      if (has_intercept) entries.emplace_back(at++, 1.0);
      if (!g.slope_x.empty()) entries.emplace_back(at, g.slope_x[static_cast<std::size_t>(i)]);
    }
    for (const auto& [c1, v1] : entries) {
      for (const auto& [c2, v2] : entries) prob.ztz(c1, c2) += v1 * v2;
      prob.zty[c1] += v1 * prob.y[i];
      prob.ztx.row(c1) += v1 * prob.fixed.X.row(i);
    }
  }
  return prob;
}

namespace {

Eigen::MatrixXd build_lambda(const LmmProblem& prob, const Eigen::VectorXd& theta) {
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(prob.q, prob.q);
  int t_off = 0;
  for (const auto& g : prob.groups) {
    const int d = g.n_terms;
    const Eigen::MatrixXd t = cholesky_block(theta, t_off, d);
    const int n_levels = static_cast<int>(g.levels.levels.size());
    for (int l = 0; l < n_levels; ++l)
      lambda.block(g.col_offset + l * d, g.col_offset + l * d, d, d) = t;
    t_off += d * (d + 1) / 2;
  }
  return lambda;
}

void check_theta(const LmmProblem& prob, const Eigen::VectorXd& theta) {
  if (theta.size() != prob.n_theta())
    throw std::invalid_argument("theta has length " + std::to_string(theta.size()) +
                                "; expected " + std::to_string(prob.n_theta()));
  const auto bounded = prob.theta_lower_bounded();
  for (std::size_t i = 0; i < bounded.size(); ++i)
    if (bounded[i] && theta[static_cast<Eigen::Index>(i)] < 0.0)
      throw std::invalid_argument("theta diagonal entries must be non-negative");
}

}  // namespace

PlsSolution solve_pls(const LmmProblem& prob, const Eigen::VectorXd& theta) {
  check_theta(prob, theta);
  const Eigen::MatrixXd lambda = build_lambda(prob, theta);

  Eigen::MatrixXd a = lambda.transpose() * prob.ztz * lambda;
  a.diagonal().array() += 1.0;
  const Eigen::LLT<Eigen::MatrixXd> llt_a(a);
  if (llt_a.info() != Eigen::Success)
    throw std::runtime_error("penalized random-effects system is not positive definite");
  const Eigen::MatrixXd lz = llt_a.matrixL();

  const Eigen::MatrixXd r_zx =
      lz.triangularView<Eigen::Lower>().solve(lambda.transpose() * prob.ztx);
  const Eigen::VectorXd c_z =
      lz.triangularView<Eigen::Lower>().solve(lambda.transpose() * prob.zty);

  const Eigen::MatrixXd s = prob.xtx - r_zx.transpose() * r_zx;
  const Eigen::LLT<Eigen::MatrixXd> llt_x(s);
  if (llt_x.info() != Eigen::Success)
    throw std::runtime_error("fixed-effects system is not positive definite");
  const Eigen::MatrixXd lx = llt_x.matrixL();
  const Eigen::VectorXd c_x =
      lx.triangularView<Eigen::Lower>().solve(prob.xty - r_zx.transpose() * c_z);

  PlsSolution out;
  out.r2 = prob.yty - c_z.squaredNorm() - c_x.squaredNorm();
  if (!(out.r2 > 1e-300)) out.r2 = 1e-300;  // degenerate perfect fit
  out.logdet_a = 2.0 * lz.diagonal().array().log().sum();
  const double n = prob.n;
  out.deviance =
      out.logdet_a + n * (1.0 + std::log(2.0 * std::numbers::pi * out.r2 / n));
  out.sigma2 = out.r2 / n;

  out.beta = lx.transpose().triangularView<Eigen::Upper>().solve(c_x);
  out.u = lz.transpose().triangularView<Eigen::Upper>().solve(c_z - r_zx * out.beta);
  out.cov_beta_v0 = llt_x.solve(Eigen::MatrixXd::Identity(prob.p, prob.p));
  return out;
}

double profiled_deviance(const LmmProblem& prob, const Eigen::VectorXd& theta) {
  return solve_pls(prob, theta).deviance;
}

namespace {

struct SimplexOutcome {
  Eigen::VectorXd x;
  double f = 0.0;
  int n_eval = 0;
  double spread = 0.0;
  bool converged = false;
};

// Standard Nelder-Mead with reflection 1, expansion 2, contraction 0.5 and
// shrink 0.5. Stops once two consecutive cycles each improve the best deviance
// by less than `tol` while the simplex deviance spread is below 10 * tol.
template <typename F>
SimplexOutcome nelder_mead(F&& f, const Eigen::VectorXd& x0, double step, double tol,
                           int max_eval) {
  const int m = static_cast<int>(x0.size());
  SimplexOutcome out;

  std::vector<Eigen::VectorXd> xs;
  std::vector<double> fs;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++out.n_eval;
    return f(x);
  };
  xs.push_back(x0);
  fs.push_back(eval(x0));
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd x = x0;
    x[i] += step;
    xs.push_back(x);
    fs.push_back(eval(x));
  }

  std::vector<int> order(xs.size());
  int stall_cycles = 0;
  double prev_best = fs[0];
  while (out.n_eval < max_eval) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order.front(), worst = order.back(), second = order[order.size() - 2];

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(m);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += xs[order[i]];
    centroid /= static_cast<double>(m);

    const Eigen::VectorXd xr = centroid + (centroid - xs[worst]);
    const double fr = eval(xr);
    if (fr < fs[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      const Eigen::VectorXd xc =
          outside ? centroid + 0.5 * (xr - centroid) : centroid + 0.5 * (xs[worst] - centroid);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fs[worst])) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (static_cast<int>(i) == best) continue;
          xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
          fs[i] = eval(xs[i]);
        }
      }
    }

    const double now_best = *std::min_element(fs.begin(), fs.end());
    const double now_worst = *std::max_element(fs.begin(), fs.end());
    out.spread = now_worst - now_best;
    if (prev_best - now_best < tol && out.spread < 10.0 * tol) {
      if (++stall_cycles >= 2) {
        out.converged = true;
        break;
      }
    } else {
      stall_cycles = 0;
    }
    prev_best = now_best;
  }

  int best = 0;
  for (std::size_t i = 1; i < fs.size(); ++i)
    if (fs[i] < fs[best]) best = static_cast<int>(i);
  out.x = xs[static_cast<std::size_t>(best)];
  out.f = fs[static_cast<std::size_t>(best)];
  return out;
}

FittedLMM build_fit(const LmmProblem& prob, const Eigen::VectorXd& theta,
                    ConvergenceReport report, std::string fixed_formula,
                    std::string random_formula) {
  const PlsSolution pls = solve_pls(prob, theta);

  FittedLMM m;
  m.theta = theta;
  m.sigma = std::sqrt(pls.sigma2);
  m.names = prob.fixed.names;

  // Undo sd-scaling so coefficients live in the same centered, unscaled
  // parameterization the GLM code reports.
  Eigen::VectorXd div(prob.p);
  for (int j = 0; j < prob.p; ++j)
    div[j] = prob.fixed.columns[static_cast<std::size_t>(j)].scale_divisor;
  m.beta = pls.beta.array() / div.array();
  m.se.resize(prob.p);
  m.tval.resize(prob.p);
  for (int j = 0; j < prob.p; ++j) {
    m.se[j] = m.sigma * std::sqrt(pls.cov_beta_v0(j, j)) / div[j];
    m.tval[j] = m.se[j] > 0.0 ? m.beta[j] / m.se[j]
                              : std::numeric_limits<double>::quiet_NaN();
  }

  int t_off = 0;
  for (const auto& g : prob.groups) {
    const int d = g.n_terms;
    const Eigen::MatrixXd t = cholesky_block(theta, t_off, d);
    for (int j = 0; j < d; ++j)
      if (t(j, j) < 1e-4) report.boundary = true;
    t_off += d * (d + 1) / 2;

    FittedLMM::GroupEffects ge;
    ge.group = g.name;
    ge.term_names = g.term_names;
    ge.n_levels = static_cast<int>(g.levels.levels.size());
    ge.cov = pls.sigma2 * (t * t.transpose());
    ge.corr = Eigen::MatrixXd::Identity(d, d);
    for (int i = 0; i < d; ++i) ge.sd.push_back(std::sqrt(ge.cov(i, i)));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        if (i == j) continue;
        ge.corr(i, j) = (ge.sd[static_cast<std::size_t>(i)] > 0.0 &&
                         ge.sd[static_cast<std::size_t>(j)] > 0.0)
                            ? std::clamp(ge.cov(i, j) / (ge.sd[static_cast<std::size_t>(i)] *
                                                         ge.sd[static_cast<std::size_t>(j)]),
                                         -1.0, 1.0)
                            : 0.0;
      }
    m.groups.push_back(std::move(ge));
  }

  m.deviance = pls.deviance;
  m.loglik = -0.5 * pls.deviance;
  m.n_obs = prob.n;
  m.p_fixed = prob.p;
  m.n_theta = prob.n_theta();
  const int k = m.p_fixed + m.n_theta + 1;
  m.aic = m.deviance + 2.0 * k;
  m.bic = m.deviance + std::log(static_cast<double>(m.n_obs)) * k;
  m.fixed_formula = std::move(fixed_formula);
  m.random_formula = std::move(random_formula);
  m.convergence = std::move(report);
  return m;
}

}  // namespace

int FittedLMM::coef_index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

FittedLMM fit_lmm(const TrialTable& t, const ModelSpec& fixed, const RandomSpec& random) {
  const LmmProblem prob = make_problem(t, fixed, random);
  const auto bounded = prob.theta_lower_bounded();
  const auto clamp_theta = [&](Eigen::VectorXd x) {
    for (std::size_t i = 0; i < bounded.size(); ++i)
      if (bounded[i] && x[static_cast<Eigen::Index>(i)] < 0.0)
        x[static_cast<Eigen::Index>(i)] = 0.0;
    return x;
  };

  constexpr int kMaxEval = 10000;
  constexpr double kTol = 1e-8;
  const auto objective = [&](const Eigen::VectorXd& x) {
    return profiled_deviance(prob, clamp_theta(x));
  };

  // Nelder-Mead with deterministic restarts: a collapsed simplex can stall off
  // the optimum, so re-seed a fresh simplex at the incumbent until a whole
  // restarted run fails to improve the deviance.
  ConvergenceReport report;
  SimplexOutcome best;
  best.x = prob.theta_start();
  best.f = std::numeric_limits<double>::infinity();
  double step = 0.25;
  while (report.n_evaluations < kMaxEval) {
    const SimplexOutcome run =
        nelder_mead(objective, best.x, step, kTol, kMaxEval - report.n_evaluations);
    report.n_evaluations += run.n_eval;
    report.final_spread = run.spread;
    const bool improved = run.f < best.f - kTol;
    if (run.f < best.f) {
      // Keep the clamped representative: a raw vertex deep in the infeasible
      // orthant would seed the next restart with a simplex that clamps to a
      // single point and stalls instantly.
      best.x = clamp_theta(run.x);
      best.f = run.f;
    }
    if (run.converged && !improved) {
      report.converged = true;
      break;
    }
    step = 0.1;
  }

  Eigen::VectorXd theta = clamp_theta(best.x);
  double dev = best.f;
  // The profiled deviance at theta = 0 is the OLS deviance; never report a fit
  // worse than that.
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(theta.size());
  const double dev0 = profiled_deviance(prob, zero);
  if (dev0 < dev) {
    theta = zero;
    dev = dev0;
    report.notes.push_back("simplex ended above the theta=0 deviance; fell back to theta=0");
  }

  const bool converged = report.converged;
  FittedLMM fit = build_fit(prob, theta, std::move(report), format_formula(fixed),
                            format_random(random));
  if (!converged)
    throw NonConvergenceError(
        "profiled-deviance search did not converge within " +
            std::to_string(kMaxEval) + " evaluations (best deviance " +
            std::to_string(dev) + ")",
        std::move(fit));
  return fit;
}

LrtResult lrt(const FittedLMM& nested, const FittedLMM& full) {
  if (nested.n_obs != full.n_obs)
    throw std::invalid_argument("likelihood-ratio test needs fits on the same observations");

  const std::set<std::string> full_fixed(full.names.begin(), full.names.end());
  for (const auto& name : nested.names)
    if (!full_fixed.contains(name))
      throw std::invalid_argument("models are not nested: fixed effect '" + name +
                                  "' is missing from the full model");
  for (const auto& gn : nested.groups) {
    const auto it = std::find_if(full.groups.begin(), full.groups.end(),
                                 [&](const auto& gf) { return gf.group == gn.group; });
    if (it == full.groups.end())
      throw std::invalid_argument("models are not nested: grouping factor '" + gn.group +
                                  "' is missing from the full model");
    for (const auto& tn : gn.term_names)
      if (std::find(it->term_names.begin(), it->term_names.end(), tn) ==
          it->term_names.end())
        throw std::invalid_argument("models are not nested: random term '" + tn +
                                    "' on '" + gn.group +
                                    "' is missing from the full model");
  }

  const int k_nested = nested.p_fixed + nested.n_theta + 1;
  const int k_full = full.p_fixed + full.n_theta + 1;
  LrtResult r;
  r.df = k_full - k_nested;
  if (r.df < 0)
    throw std::invalid_argument("models are not nested: the full model has fewer parameters");

  r.chi2 = nested.deviance - full.deviance;
  if (r.chi2 < -1e-6)
    throw std::runtime_error("nested model has lower deviance than the full model; "
                             "check convergence");
  r.chi2 = std::max(r.chi2, 0.0);
  r.p = r.df == 0 ? 1.0 : chi_squared_sf(r.chi2, r.df);
  return r;
}

namespace {

std::vector<Interval> wald_impl(const Eigen::VectorXd& beta, const Eigen::VectorXd& se,
                                double level) {
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence level must lie in (0, 1)");
  const double z = normal_quantile(0.5 * (1.0 + level));
  std::vector<Interval> out;
  out.reserve(static_cast<std::size_t>(beta.size()));
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    out.push_back({beta[j] - z * se[j], beta[j] + z * se[j]});
  return out;
}

}  // namespace

std::vector<Interval> wald_intervals(const FittedLMM& m, double level) {
  return wald_impl(m.beta, m.se, level);
}

std::vector<Interval> wald_intervals(const FittedGLM& m, double level) {
  return wald_impl(m.beta, m.se, level);
}

InformationCriteria information_criteria(const FittedLMM& m) {
  return {m.loglik, m.deviance, m.aic, m.bic};
}

std::string summary_text(const FittedLMM& m) {
  std::ostringstream os;
  char buf[256];

  os << "Linear mixed model fit by maximum likelihood (ML)\n";
  os << "Formula: " << m.fixed_formula << " + " << m.random_formula << "\n\n";

  std::snprintf(buf, sizeof(buf), "%10s%10s%10s%10s%10s\n%10.1f%10.1f%10.1f%10.1f%10d\n\n",
                "AIC", "BIC", "logLik", "deviance", "df.resid", m.aic, m.bic, m.loglik,
                m.deviance, m.df_residual());
  os << buf;

  std::size_t name_w = std::string("(Intercept)").size();
  std::size_t group_w = std::string("Residual").size();
  for (const auto& g : m.groups) {
    group_w = std::max(group_w, g.group.size());
    for (const auto& n : g.term_names) name_w = std::max(name_w, n.size());
  }

  os << "Random effects:\n";
  std::snprintf(buf, sizeof(buf), " %-*s %-*s %10s  %s\n", static_cast<int>(group_w),
                "Groups", static_cast<int>(name_w), "Name", "Std.Dev.", "Corr");
  os << buf;
  for (const auto& g : m.groups) {
    for (std::size_t i = 0; i < g.term_names.size(); ++i) {
      std::snprintf(buf, sizeof(buf), " %-*s %-*s %10.5f", static_cast<int>(group_w),
                    i == 0 ? g.group.c_str() : "", static_cast<int>(name_w),
                    g.term_names[i].c_str(), g.sd[i]);
      os << buf;
      for (std::size_t j = 0; j < i; ++j) {
        std::snprintf(buf, sizeof(buf), "  %5.2f", g.corr(static_cast<Eigen::Index>(i),
                                                          static_cast<Eigen::Index>(j)));
        os << buf;
      }
      os << "\n";
    }
  }
  std::snprintf(buf, sizeof(buf), " %-*s %-*s %10.5f\n", static_cast<int>(group_w),
                "Residual", static_cast<int>(name_w), "", m.sigma);
  os << buf;

  os << "Number of obs: " << m.n_obs << "; groups: ";
  for (std::size_t i = 0; i < m.groups.size(); ++i) {
    if (i > 0) os << "; ";
    os << m.groups[i].group << ", " << m.groups[i].n_levels;
  }
  os << "\n\nFixed effects:\n";

  std::size_t fixed_w = 0;
  for (const auto& n : m.names) fixed_w = std::max(fixed_w, n.size());
  std::snprintf(buf, sizeof(buf), "%-*s %12s %12s %9s\n", static_cast<int>(fixed_w), "",
                "Estimate", "Std. Error", "t value");
  os << buf;
  for (std::size_t j = 0; j < m.names.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    std::snprintf(buf, sizeof(buf), "%-*s %12.5f %12.5f %9.2f\n",
                  static_cast<int>(fixed_w), m.names[j].c_str(), m.beta[idx], m.se[idx],
                  m.tval[idx]);
    os << buf;
  }
  if (m.convergence.boundary)
    os << "\nBoundary fit: at least one variance component is at zero.\n";
  return os.str();
}

void write_fit_json(const FittedLMM& m, const std::string& path) {
  nlohmann::json j;
  j["formula"]["fixed"] = m.fixed_formula;
  j["formula"]["random"] = m.random_formula;
  j["n_obs"] = m.n_obs;
  j["criteria"] = {{"loglik", m.loglik},   {"deviance", m.deviance},
                   {"aic", m.aic},         {"bic", m.bic},
                   {"df_residual", m.df_residual()},
                   {"n_parameters", m.p_fixed + m.n_theta + 1}};

  auto& fixed = j["fixed_effects"];
  fixed = nlohmann::json::array();
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    fixed.push_back({{"name", m.names[i]},
                     {"estimate", m.beta[idx]},
                     {"se", m.se[idx]},
                     {"t", m.tval[idx]}});
  }

  auto& random = j["random_effects"];
  random = nlohmann::json::array();
  for (const auto& g : m.groups) {
    nlohmann::json terms = nlohmann::json::array();
    for (std::size_t i = 0; i < g.term_names.size(); ++i)
      terms.push_back({{"name", g.term_names[i]}, {"sd", g.sd[i]}});
    nlohmann::json corr = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g.corr.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < g.corr.cols(); ++c) row.push_back(g.corr(r, c));
      corr.push_back(row);
    }
    random.push_back({{"group", g.group},
                      {"n_levels", g.n_levels},
                      {"terms", terms},
                      {"corr", corr}});
  }
  j["residual_sd"] = m.sigma;

  auto& th = j["theta"];
  th = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.theta.size(); ++i) th.push_back(m.theta[i]);

  j["convergence"] = {{"n_evaluations", m.convergence.n_evaluations},
                      {"final_spread", m.convergence.final_spread},
                      {"converged", m.convergence.converged},
                      {"boundary", m.convergence.boundary},
                      {"notes", m.convergence.notes}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace erpreg
