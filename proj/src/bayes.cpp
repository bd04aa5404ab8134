#include "erpreg/bayes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "erpreg/parallel.hpp"
#include "erpreg/rng.hpp"
#include "erpreg/stats.hpp"

namespace erpreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_prior(const Prior& p, const std::string& what) {
  if (!(p.scale > 0.0))
    throw std::invalid_argument(what + ": prior scale must be positive");
  if (p.kind == Prior::Kind::student_t && !(p.df > 0.0))
    throw std::invalid_argument(what + ": prior df must be positive");
}

// The whole target density, precomputed once: the Gaussian log-likelihood
// needs only (X'X, X'y, y'y, n), so one evaluation is O(p^2) regardless of n.
struct Target {
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;
  double yty = 0.0;
  int n = 0;
  int p = 0;
  std::vector<Prior> priors;  // one per coefficient
  double residual_df = 3.0;
  double residual_scale = 10.0;

  double logp(const Eigen::VectorXd& params) const {
    const double ls = params[p];
    const double sigma = std::exp(ls);
    double lp = 0.0;
    if (n > 0) {
      const auto beta = params.head(p);
      const double rss = yty - 2.0 * beta.dot(xty) + beta.dot(xtx * beta);
      lp += -0.5 * n * std::log(2.0 * std::numbers::pi) - n * ls -
            0.5 * rss / (sigma * sigma);
    }
    for (int j = 0; j < p; ++j)
      lp += priors[static_cast<std::size_t>(j)].logpdf(params[j]);
    // Half-t prior on sigma plus the log-scale Jacobian.
    lp += half_student_t_logpdf(sigma, residual_df, residual_scale) + ls;
    return lp;
  }
};

Target make_target(const DesignMatrix& d, const Eigen::VectorXd& y,
                   const PriorSpec& priors) {
  Target t;
  t.p = d.p();
  t.n = static_cast<int>(d.X.rows());
  t.xtx = d.X.transpose() * d.X;
  t.xty = d.X.transpose() * y;
  t.yty = y.squaredNorm();
  for (const std::string& name : d.names)
    t.priors.push_back(priors.for_coefficient(name));
  t.residual_df = priors.residual_df;
  t.residual_scale = priors.residual_scale;
  return t;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Split in half, truncating every chain to the shortest even prefix, then
// replace values by normal scores of their pooled midranks.
std::vector<std::vector<double>> rank_normalized_halves(
    const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) throw std::invalid_argument("no chains");
  std::size_t len = chains[0].size();
  for (const auto& c : chains) len = std::min(len, c.size());
  const std::size_t half = len / 2;
  if (half < 2)
    throw std::invalid_argument("chains must hold at least 4 draws");

  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    halves.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(half),
                        c.begin() + static_cast<std::ptrdiff_t>(2 * half));
  }

  struct Entry {
    double value;
    std::size_t chain, idx;
  };
  std::vector<Entry> pool;
  for (std::size_t c = 0; c < halves.size(); ++c)
    for (std::size_t i = 0; i < half; ++i) pool.push_back({halves[c][i], c, i});
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Entry& a, const Entry& b) { return a.value < b.value; });

  const double s = static_cast<double>(pool.size());
  std::size_t i = 0;
  while (i < pool.size()) {
    std::size_t j = i;
    while (j < pool.size() && pool[j].value == pool[i].value) ++j;
    // Midrank of the tie run [i, j), 1-based.
    const double rank = 0.5 * static_cast<double>(i + j + 1);
    const double z = normal_quantile((rank - 0.375) / (s + 0.25));
    for (std::size_t k = i; k < j; ++k) halves[pool[k].chain][pool[k].idx] = z;
    i = j;
  }
  return halves;
}

struct ChainStats {
  double w = 0.0;         // mean within-chain variance
  double b_over_n = 0.0;  // between-chain variance of means
  double var_plus = 0.0;
  std::size_t m = 0, n = 0;
};

ChainStats chain_stats(const std::vector<std::vector<double>>& z) {
  ChainStats s;
  s.m = z.size();
  s.n = z[0].size();
  std::vector<double> means;
  for (const auto& c : z) {
    means.push_back(mean(c));
    s.w += sample_variance(c);
  }
  s.w /= static_cast<double>(s.m);
  s.b_over_n = sample_variance(means);
  const double n = static_cast<double>(s.n);
  s.var_plus = (n - 1.0) / n * s.w + s.b_over_n;
  return s;
}

}  // namespace

double Prior::logpdf(double x) const {
  return kind == Kind::normal ? normal_logpdf(x, location, scale)
                              : student_t_logpdf(x, df, location, scale);
}

double Prior::sample(std::mt19937_64& engine) const {
  if (kind == Kind::normal) {
    std::normal_distribution<double> n(location, scale);
    return n(engine);
  }
  std::student_t_distribution<double> t(df);
  return location + scale * t(engine);
}

Prior normal_prior(double mean, double sd) {
  Prior p;
  p.kind = Prior::Kind::normal;
  p.location = mean;
  p.scale = sd;
  check_prior(p, "normal prior");
  return p;
}

Prior student_t_prior(double df, double location, double scale) {
  Prior p;
  p.kind = Prior::Kind::student_t;
  p.df = df;
  p.location = location;
  p.scale = scale;
  check_prior(p, "student-t prior");
  return p;
}

Prior student_t_prior_with_variance(double df, double location, double variance) {
  if (!(df > 2.0))
    throw std::invalid_argument(
        "student-t variance is finite only for df > 2");
  if (!(variance > 0.0))
    throw std::invalid_argument("prior variance must be positive");
  // Var = scale^2 * df / (df - 2).
  return student_t_prior(df, location, std::sqrt(variance * (df - 2.0) / df));
}

const Prior& PriorSpec::for_coefficient(const std::string& name) const {
  const auto it = coefficients.find(name);
  return it == coefficients.end() ? fallback : it->second;
}

void PriorSpec::validate() const {
  for (const auto& [name, p] : coefficients) check_prior(p, "prior for " + name);
  check_prior(fallback, "fallback prior");
  if (!(residual_df > 0.0))
    throw std::invalid_argument("residual prior df must be positive");
  if (!(residual_scale > 0.0))
    throw std::invalid_argument("residual prior scale must be positive");
}

double log_posterior(const Eigen::VectorXd& params, const DesignMatrix& d,
                     const Eigen::VectorXd& y, const PriorSpec& priors) {
  priors.validate();
  if (params.size() != d.p() + 1)
    throw std::invalid_argument(
        "params must hold one value per design column plus log sigma");
  if (y.size() != d.X.rows())
    throw std::invalid_argument("response length does not match the design");
  return make_target(d, y, priors).logp(params);
}

PosteriorSamples sample_posterior(const DesignMatrix& d, const Eigen::VectorXd& y,
                                  const PriorSpec& priors, int n_chains,
                                  int n_warmup, int n_iter, std::uint64_t seed,
                                  int n_threads) {
  priors.validate();
  if (n_chains < 2)
    throw std::invalid_argument("n_chains must be at least 2");
  if (n_iter < 1) throw std::invalid_argument("n_iter must be positive");
  if (n_warmup < 0) throw std::invalid_argument("n_warmup must be non-negative");
  if (y.size() != d.X.rows())
    throw std::invalid_argument("response length does not match the design");

  const Target target = make_target(d, y, priors);
  const int np = target.p + 1;

  PosteriorSamples out;
  out.names = d.names;
  out.names.push_back("sigma");
  out.n_chains = n_chains;
  out.n_warmup = n_warmup;
  out.n_iter = n_iter;
  out.seed = seed;
  out.draws.assign(static_cast<std::size_t>(n_chains), Eigen::MatrixXd());
  out.acceptance.assign(static_cast<std::size_t>(n_chains),
                        std::vector<double>(static_cast<std::size_t>(np), 0.0));

  parallel_for(
      static_cast<std::size_t>(n_chains),
      [&](std::size_t c) {
        auto engine = make_engine(seed, c);
        std::normal_distribution<double> n01(0.0, 1.0);
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        // Overdispersed start: a prior draw plus one extra prior-scale
        // jitter; the residual SD starts at a half-t draw on the log scale.
        Eigen::VectorXd x(np);
        for (int j = 0; j < target.p; ++j) {
          const Prior& pr = target.priors[static_cast<std::size_t>(j)];
          x[j] = pr.sample(engine) + pr.scale * n01(engine);
        }
        std::student_t_distribution<double> td(target.residual_df);
        const double s0 = std::abs(td(engine)) * target.residual_scale;
        x[target.p] = std::log(std::max(s0, 1e-3)) + 0.5 * n01(engine);

        Eigen::VectorXd step(np);
        for (int j = 0; j < target.p; ++j)
          step[j] = target.priors[static_cast<std::size_t>(j)].scale;
        step[target.p] = 1.0;

        double lp = target.logp(x);
        if (!std::isfinite(lp)) lp = -kInf;

        std::vector<int> kept(static_cast<std::size_t>(np), 0);
        std::vector<int> batch_kept(static_cast<std::size_t>(np), 0);
        int batch = 0;

        Eigen::MatrixXd draws(n_iter, np);
        for (int iter = 0; iter < n_warmup + n_iter; ++iter) {
          const bool warm = iter < n_warmup;
          for (int k = 0; k < np; ++k) {
            const double z = n01(engine);
            const double u = u01(engine);
            const double old = x[k];
            x[k] = old + step[k] * z;
            double lpn = target.logp(x);
            if (!std::isfinite(lpn)) lpn = -kInf;
            if (std::log(u) < lpn - lp) {
              lp = lpn;
              if (warm)
                ++batch_kept[static_cast<std::size_t>(k)];
              else
                ++kept[static_cast<std::size_t>(k)];
            } else {
              x[k] = old;
            }
          }
          if (warm && (iter + 1) % 50 == 0) {
            ++batch;
            const double delta =
                std::min(0.5, 1.5 / std::sqrt(static_cast<double>(batch)));
            for (int k = 0; k < np; ++k) {
              const double rate = batch_kept[static_cast<std::size_t>(k)] / 50.0;
              if (rate < 0.25)
                step[k] *= std::exp(-delta);
              else if (rate > 0.45)
                step[k] *= std::exp(delta);
              batch_kept[static_cast<std::size_t>(k)] = 0;
            }
          }
          if (!warm) {
            const int row = iter - n_warmup;
            for (int j = 0; j < target.p; ++j) draws(row, j) = x[j];
            draws(row, target.p) = std::exp(x[target.p]);
          }
        }
        out.draws[c] = std::move(draws);
        for (int k = 0; k < np; ++k)
          out.acceptance[c][static_cast<std::size_t>(k)] =
              static_cast<double>(kept[static_cast<std::size_t>(k)]) / n_iter;
      },
      n_threads);

  out.rhat.resize(static_cast<std::size_t>(np));
  out.ess.resize(static_cast<std::size_t>(np));
  for (int k = 0; k < np; ++k) {
    std::vector<std::vector<double>> chains;
    for (const auto& m : out.draws) {
      const Eigen::VectorXd col = m.col(k);
      chains.emplace_back(col.data(), col.data() + col.size());
    }
    const double r = split_rhat(chains);
    out.rhat[static_cast<std::size_t>(k)] = r;
    out.ess[static_cast<std::size_t>(k)] = split_ess(chains);
    if (!(r <= 1.05)) {
      out.converged = false;
      out.warnings.push_back("parameter '" + out.names[static_cast<std::size_t>(k)] +
                             "' has split R-hat " + fmt_double(r) +
                             " (needs more iterations or better mixing)");
    }
  }
  return out;
}

PosteriorSamples sample_posterior(const TrialTable& t, const ModelSpec& spec,
                                  const PriorSpec& priors, int n_chains,
                                  int n_warmup, int n_iter, std::uint64_t seed,
                                  int n_threads) {
  const DesignMatrix d = build_design(t, spec);
  const Eigen::VectorXd y =
      Eigen::Map<const Eigen::VectorXd>(t.value.data(),
                                        static_cast<Eigen::Index>(t.value.size()));
  return sample_posterior(d, y, priors, n_chains, n_warmup, n_iter, seed,
                          n_threads);
}

int PosteriorSamples::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<double> PosteriorSamples::pooled(int param) const {
  std::vector<double> out;
  for (const auto& m : draws)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      out.push_back(m(i, param));
  return out;
}

std::vector<double> PosteriorSamples::pooled(const std::string& name) const {
  const int k = index(name);
  if (k < 0) throw std::invalid_argument("unknown parameter '" + name + "'");
  return pooled(k);
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  const auto z = rank_normalized_halves(chains);
  const ChainStats s = chain_stats(z);
  if (s.w <= 0.0) return s.b_over_n > 0.0 ? kInf : 1.0;
  return std::sqrt(s.var_plus / s.w);
}

double split_ess(const std::vector<std::vector<double>>& chains) {
  const auto z = rank_normalized_halves(chains);
  const ChainStats s = chain_stats(z);
  const double total = static_cast<double>(s.m * s.n);
  if (s.var_plus <= 0.0) return total;

  // Chain-averaged variogram autocorrelations with Geyer's initial positive
  // monotone sequence.
  const std::size_t n = s.n;
  std::vector<double> rho;
  rho.push_back(1.0);
  for (std::size_t t = 1; t < n; ++t) {
    double v = 0.0;
    for (const auto& c : z)
      for (std::size_t i = 0; i + t < n; ++i) {
        const double dlag = c[i + t] - c[i];
        v += dlag * dlag;
      }
    v /= static_cast<double>(s.m * (n - t));
    rho.push_back(1.0 - v / (2.0 * s.var_plus));
  }

  double tau = 0.0;
  double prev = kInf;
  for (std::size_t k = 0; 2 * k + 1 < rho.size(); ++k) {
    double pair = rho[2 * k] + rho[2 * k + 1];
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    tau += pair;
    prev = pair;
  }
  tau = 2.0 * tau - 1.0;
  return total / std::max(tau, 1.0 / total);
}

double posterior_mode(const std::vector<double>& draws) {
  if (draws.empty()) throw std::invalid_argument("no draws");
  const auto [lo_it, hi_it] = std::minmax_element(draws.begin(), draws.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi) return lo;

  const double n = static_cast<double>(draws.size());
  std::vector<double> sorted = draws;
  std::sort(sorted.begin(), sorted.end());
  const double iqr =
      quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double sd = std::sqrt(sample_variance(draws));
  double spread = std::min(sd, iqr / 1.34);
  if (spread <= 0.0) spread = sd > 0.0 ? sd : 1.0;
  const double h = 0.9 * spread * std::pow(n, -0.2);

  const int grid = 512;
  double best_x = lo, best_f = -1.0;
  for (int g = 0; g < grid; ++g) {
    const double x = lo + (hi - lo) * g / (grid - 1);
    double f = 0.0;
    for (const double v : draws) {
      const double u = (x - v) / h;
      f += std::exp(-0.5 * u * u);
    }
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  return best_x;
}

void write_draws_csv(const PosteriorSamples& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "chain,iter,param,value\n";
  for (std::size_t c = 0; c < s.draws.size(); ++c)
    for (Eigen::Index i = 0; i < s.draws[c].rows(); ++i)
      for (std::size_t k = 0; k < s.names.size(); ++k)
        out << (c + 1) << ',' << (i + 1) << ',' << s.names[k] << ','
            << fmt_double(s.draws[c](i, static_cast<Eigen::Index>(k))) << '\n';
}

void write_density_csv(const PosteriorSamples& s, const PriorSpec& priors,
                       const std::string& path) {
  priors.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "param,value,prior,posterior\n";

  const int grid = 256;
  for (std::size_t k = 0; k < s.names.size(); ++k) {
    const bool is_sigma = k + 1 == s.names.size();
    const std::vector<double> draws = s.pooled(static_cast<int>(k));
    const auto [lo_it, hi_it] = std::minmax_element(draws.begin(), draws.end());

    // Cover both the draws and the prior's bulk.
    double lo = *lo_it, hi = *hi_it;
    if (is_sigma) {
      lo = std::min(lo, 0.0);
      hi = std::max(hi, 2.0 * priors.residual_scale);
    } else {
      const Prior& pr = priors.for_coefficient(s.names[k]);
      const double reach = (pr.kind == Prior::Kind::normal ? 4.0 : 8.0) * pr.scale;
      lo = std::min(lo, pr.location - reach);
      hi = std::max(hi, pr.location + reach);
    }
    if (hi <= lo) hi = lo + 1.0;

    std::vector<double> xs(grid), prior_d(grid), post_d(grid);
    for (int g = 0; g < grid; ++g)
      xs[static_cast<std::size_t>(g)] = lo + (hi - lo) * g / (grid - 1);

    for (int g = 0; g < grid; ++g) {
      const double x = xs[static_cast<std::size_t>(g)];
      prior_d[static_cast<std::size_t>(g)] =
          is_sigma ? (x >= 0.0 ? std::exp(half_student_t_logpdf(
                                     x, priors.residual_df, priors.residual_scale))
                               : 0.0)
                   : std::exp(priors.for_coefficient(s.names[k]).logpdf(x));
    }

    const double n = static_cast<double>(draws.size());
    const double sd = std::sqrt(sample_variance(draws));
    std::vector<double> sorted = draws;
    std::sort(sorted.begin(), sorted.end());
    const double iqr =
        quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = sd > 0.0 ? sd : 1.0;
    const double h = 0.9 * spread * std::pow(n, -0.2);
    for (int g = 0; g < grid; ++g) {
      double f = 0.0;
      for (const double v : draws) {
        const double u = (xs[static_cast<std::size_t>(g)] - v) / h;
        f += std::exp(-0.5 * u * u);
      }
      post_d[static_cast<std::size_t>(g)] = f;
    }

    // Per-curve peak normalized to 1.
    const double pmax = *std::max_element(prior_d.begin(), prior_d.end());
    const double qmax = *std::max_element(post_d.begin(), post_d.end());
    for (int g = 0; g < grid; ++g) {
      const auto u = static_cast<std::size_t>(g);
      out << s.names[k] << ',' << fmt_double(xs[u]) << ','
          << fmt_double(pmax > 0.0 ? prior_d[u] / pmax : 0.0) << ','
          << fmt_double(qmax > 0.0 ? post_d[u] / qmax : 0.0) << '\n';
    }
  }
}

}  // namespace erpreg
