#include "erpreg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace erpreg {

double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean of empty range");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("sample_variance needs >= 2 values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty range");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile level outside [0,1]");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = q * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double quantile(std::vector<double> x, double q) {
  std::sort(x.begin(), x.end());
  return quantile_sorted(x, q);
}

double normal_cdf(double x) {
  static const boost::math::normal_distribution<double> d(0.0, 1.0);
  return boost::math::cdf(d, x);
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> d(0.0, 1.0);
  return boost::math::quantile(d, p);
}

double chi_squared_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  boost::math::chi_squared_distribution<double> d(df);
  return boost::math::cdf(boost::math::complement(d, x));
}

double student_t_cdf(double x, double df) {
  boost::math::students_t_distribution<double> d(df);
  return boost::math::cdf(d, x);
}

double normal_logpdf(double x, double m, double sd) {
  const double z = (x - m) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

double student_t_logpdf(double x, double df, double location, double scale) {
  const double z = (x - location) / scale;
  const double half = 0.5 * (df + 1.0);
  return std::lgamma(half) - std::lgamma(0.5 * df) - 0.5 * std::log(df * M_PI) -
         std::log(scale) - half * std::log1p(z * z / df);
}

double half_student_t_logpdf(double x, double df, double scale) {
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(2.0) + student_t_logpdf(x, df, 0.0, scale);
}

std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pearson_r needs two equal-length ranges (n >= 2)");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

Interval clopper_pearson(int k, int n, double level) {
  if (n <= 0 || k < 0 || k > n) throw std::invalid_argument("clopper_pearson: bad counts");
  if (level <= 0.0 || level >= 1.0)
    throw std::invalid_argument("clopper_pearson: level outside (0,1)");
  using boost::math::binomial_distribution;
  const double alpha = 1.0 - level;
  Interval ci;
  ci.lo = binomial_distribution<double>::find_lower_bound_on_p(n, k, alpha / 2.0);
  ci.hi = binomial_distribution<double>::find_upper_bound_on_p(n, k, alpha / 2.0);
  return ci;
}

double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw std::invalid_argument("ks_statistic on empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

}  // namespace erpreg
