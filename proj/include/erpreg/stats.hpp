#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace erpreg {

double mean(std::span<const double> x);
// Unbiased sample variance (denominator n-1).
double sample_variance(std::span<const double> x);

// Linear-interpolation quantile on a sorted sample (R type 7): h = (n-1)*q.
double quantile_sorted(std::span<const double> sorted, double q);
// Convenience: copies, sorts, interpolates.
double quantile(std::vector<double> x, double q);

double normal_cdf(double x);
double normal_quantile(double p);
// Upper tail P(X > x) for chi-square with df degrees of freedom.
double chi_squared_sf(double x, double df);
double student_t_cdf(double x, double df);

double normal_logpdf(double x, double mean, double sd);
double student_t_logpdf(double x, double df, double location, double scale);
// Density of |T| for T ~ scale * t_df, defined on x >= 0.
double half_student_t_logpdf(double x, double df, double scale);

// Pearson correlation; empty when either input has zero variance.
std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Exact (Clopper-Pearson) binomial confidence interval for k successes in n.
Interval clopper_pearson(int k, int n, double level);

// Two-sided Kolmogorov-Smirnov distance between a sample and a reference CDF.
double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf);

}  // namespace erpreg
