#include "erpreg/ols.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/QR>

#include "erpreg/baseline.hpp"
#include "erpreg/parallel.hpp"

namespace erpreg {

int FittedGLM::coef_index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

FittedGLM fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  std::vector<std::string> names,
                  const std::vector<double>& scale_divisors) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (y.size() != n)
    throw std::invalid_argument("response length does not match design rows");
  if (n <= p)
    throw std::invalid_argument("need more observations than parameters (n=" +
                                std::to_string(n) + ", p=" + std::to_string(p) + ")");
  if (!scale_divisors.empty() && static_cast<int>(scale_divisors.size()) != p)
    throw std::invalid_argument("scale_divisors length does not match columns");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(std::numeric_limits<double>::epsilon() *
                  static_cast<double>(std::max(n, p)));
  if (static_cast<int>(qr.rank()) < p)
    throw std::runtime_error("design matrix is rank-deficient (rank " +
                             std::to_string(qr.rank()) + " of " + std::to_string(p) +
                             ")");

  FittedGLM m;
  m.n_obs = n;
  m.p = p;
  m.beta = qr.solve(y);
  m.residuals = y - X * m.beta;
  m.rss = m.residuals.squaredNorm();
  m.sigma2 = m.rss / static_cast<double>(n - p);

  // (X^T X)^{-1} = P R^{-1} R^{-T} P^T from the pivoted factorization X P = Q R.
  Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  Eigen::MatrixXd rinv =
      R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd inner = rinv * rinv.transpose();
  const auto& perm = qr.colsPermutation();
  m.xtx_inv = perm * inner * perm.transpose();

  m.se = (m.sigma2 * m.xtx_inv.diagonal().array()).sqrt();

  // Undo sd-scaling so reports live in the unscaled parameterization.
  if (!scale_divisors.empty()) {
    for (int j = 0; j < p; ++j) {
      const double dj = scale_divisors[j];
      m.beta[j] /= dj;
      m.se[j] /= dj;
      for (int i = 0; i < p; ++i) {
        m.xtx_inv(i, j) /= dj;
        m.xtx_inv(j, i) /= dj;
      }
    }
  }
  m.tval = m.beta.array() / m.se.array();

  double ml_var = m.rss / static_cast<double>(n);
  if (ml_var < 1e-300) {
    ml_var = 1e-300;
    m.variance_floored = true;
  }
  m.loglik = -0.5 * n * (std::log(2.0 * std::numbers::pi * ml_var) + 1.0);
  m.aic = -2.0 * m.loglik + 2.0 * (p + 1);
  m.bic = -2.0 * m.loglik + std::log(static_cast<double>(n)) * (p + 1);

  if (names.empty())
    for (int j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
  if (static_cast<int>(names.size()) != p)
    throw std::invalid_argument("coefficient name count does not match columns");
  m.names = std::move(names);
  return m;
}

FittedGLM fit_ols(const TrialTable& t, const DesignMatrix& d) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(t.n_rows()));
  for (std::size_t i = 0; i < t.n_rows(); ++i) y[static_cast<Eigen::Index>(i)] = t.value[i];
  std::vector<double> divisors;
  divisors.reserve(d.columns.size());
  for (const auto& c : d.columns) divisors.push_back(c.scale_divisor);
  return fit_ols(d.X, y, d.names, divisors);
}

FittedGLM fit_ols(const TrialTable& t, const ModelSpec& spec) {
  return fit_ols(t, build_design(t, spec));
}

InformationCriteria information_criteria(const FittedGLM& m) {
  return {m.loglik, -2.0 * m.loglik, m.aic, m.bic};
}

namespace {

void check_pointwise_spec(const ModelSpec& spec) {
  for (const auto& term : spec.terms)
    for (const auto& name : term)
      if (name != "baseline" && name != "condition")
        throw std::invalid_argument(
            "pointwise fits accept only 'baseline' and 'condition' terms; got '" +
            name + "'");
}

}  // namespace

PointwiseResult pointwise_fit(const EpochSet& e, const ModelSpec& spec,
                              const TimeWindow& baseline_window, int n_threads) {
  check_pointwise_spec(spec);
  const BaselineFeature bf = baseline_feature(e, baseline_window);

  PointwiseResult r;
  r.channels = e.channels();
  r.sampling = e.sampling();
  r.spec = spec;
  r.covariate_center.resize(e.n_channels());

  const int C = e.n_channels();
  const int S = e.n_samples();
  const int T = e.n_trials();

  // Per-channel designs: same spec, channel-specific baseline covariate.
  std::vector<DesignMatrix> designs(C);
  for (int c = 0; c < C; ++c) {
    TrialTable t;
    t.unit_kind = "channel";
    for (int tr = 0; tr < T; ++tr) {
      const TrialMeta& m = e.trials()[tr];
      t.subject.push_back(m.subject);
      t.item.push_back(m.item);
      t.condition.push_back(m.condition);
      t.trial_index.push_back(m.trial_index);
      t.unit.push_back(e.channels()[c]);
      t.value.push_back(0.0);
    }
    std::vector<double> b(T);
    for (int tr = 0; tr < T; ++tr) b[tr] = bf.value(tr, c);
    t.covariates["baseline"] = std::move(b);
    try {
      designs[c] = build_design(t, spec);
    } catch (const std::exception& ex) {
      throw std::runtime_error("pointwise fit failed on channel " + e.channels()[c] +
                               ": " + ex.what());
    }
    r.covariate_center[c] = designs[c].covariate_center;
  }

  r.names = designs[0].names;
  r.columns = designs[0].columns;
  if (const Factor* f = designs[0].factor("condition")) {
    r.condition = *f;
    r.has_condition = true;
  }
  const int p = static_cast<int>(r.names.size());
  r.coef.assign(p, Eigen::MatrixXd::Zero(C, S));
  r.se.assign(p, Eigen::MatrixXd::Zero(C, S));

  parallel_for(
      static_cast<std::size_t>(C) * S,
      [&](std::size_t cell) {
        const int c = static_cast<int>(cell / S);
        const int k = static_cast<int>(cell % S);
        Eigen::VectorXd y(T);
        for (int tr = 0; tr < T; ++tr) y[tr] = e.value(tr, c, k);
        std::vector<double> divisors;
        for (const auto& col : designs[c].columns) divisors.push_back(col.scale_divisor);
        try {
          FittedGLM m = fit_ols(designs[c].X, y, designs[c].names, divisors);
          for (int j = 0; j < p; ++j) {
            r.coef[j](c, k) = m.beta[j];
            r.se[j](c, k) = m.se[j];
          }
        } catch (const std::exception& ex) {
          throw std::runtime_error("pointwise fit failed at channel " +
                                   e.channels()[c] + ", sample " + std::to_string(k) +
                                   " (" + std::to_string(e.sampling().time_ms(k)) +
                                   " ms): " + ex.what());
        }
      },
      n_threads);
  return r;
}

Eigen::MatrixXd corrected_waveform(const PointwiseResult& r,
                                   const std::string& condition_level) {
  const int C = static_cast<int>(r.channels.size());
  const int S = r.sampling.n_samples;
  const int p = static_cast<int>(r.names.size());

  // Column weights at (condition = level, centered baseline = 0).
  std::vector<double> w(p, 1.0);
  for (int j = 0; j < p; ++j) {
    for (const auto& part : r.columns[j].parts) {
      if (part.is_covariate) {
        w[j] = 0.0;  // centered baseline at its mean
        break;
      }
      if (!r.has_condition)
        throw std::logic_error("factor part without a condition factor");
      const int li = r.condition.level_index(condition_level);
      if (li < 0)
        throw std::invalid_argument("unknown condition level '" + condition_level + "'");
      const int k = static_cast<int>(r.condition.levels.size());
      w[j] *= (li == part.contrast_index) ? 1.0 : (li == k - 1 ? -1.0 : 0.0);
    }
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(C, S);
  for (int j = 0; j < p; ++j)
    if (w[j] != 0.0) out += w[j] * r.coef[j];
  return out;
}

EpochSet apply_regression(const EpochSet& e, const ModelSpec& spec,
                          const TimeWindow& baseline_window, int n_threads) {
  const PointwiseResult r = pointwise_fit(e, spec, baseline_window, n_threads);
  const BaselineFeature bf = baseline_feature(e, baseline_window);
  const int C = e.n_channels();
  const int S = e.n_samples();
  const int T = e.n_trials();
  const int p = static_cast<int>(r.names.size());

  std::vector<double> data(e.data());
  for (int tr = 0; tr < T; ++tr) {
    const TrialMeta& m = e.trials()[tr];
    const int li = r.has_condition ? r.condition.level_index(m.condition) : -1;
    const int nlev = r.has_condition ? static_cast<int>(r.condition.levels.size()) : 0;
    for (int c = 0; c < C; ++c) {
      const double b_centered =
          bf.value(tr, c) - r.covariate_center[c].at("baseline");
      for (int j = 0; j < p; ++j) {
        if (!r.columns[j].involves("baseline")) continue;
        double x = 1.0;
        for (const auto& part : r.columns[j].parts) {
          if (part.is_covariate) {
            x *= b_centered;
          } else {
            x *= (li == part.contrast_index) ? 1.0 : (li == nlev - 1 ? -1.0 : 0.0);
          }
        }
        if (x == 0.0) continue;
        double* row = data.data() + (static_cast<std::size_t>(tr) * C + c) * S;
        for (int k = 0; k < S; ++k) row[k] -= x * r.coef[j](c, k);
      }
    }
  }
  return EpochSet(e.trials(), e.channels(), e.sampling(), std::move(data));
}

void write_pointwise_csv(const PointwiseResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "channel,time_ms,term,estimate,se\n";
  auto fmt = [](double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };
  const int C = static_cast<int>(r.channels.size());
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < r.sampling.n_samples; ++k)
      for (std::size_t j = 0; j < r.names.size(); ++j)
        out << r.channels[c] << ',' << fmt(r.sampling.time_ms(k)) << ',' << r.names[j]
            << ',' << fmt(r.coef[j](c, k)) << ',' << fmt(r.se[j](c, k)) << '\n';
}

}  // namespace erpreg
