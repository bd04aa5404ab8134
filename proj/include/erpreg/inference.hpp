#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/types.hpp"

namespace erpreg {

// Percentile bootstrap band over subjects. `point` is the across-subject mean;
// the only structural invariant is lo <= hi (containment of the point estimate
// is a statistical property, not an assertion).
struct BootstrapBand {
  Eigen::MatrixXd point, lo, hi;  // same cell grid as the inputs
  double level = 0.95;
  int n_boot = 2000;
  std::uint64_t seed = 0;
};

// Resamples subjects with replacement n_boot times, recomputes the mean per
// cell, and takes linear-interpolation percentile intervals at (1 +/- level)/2.
// Deterministic in (seed, n_boot, data) and invariant to subject ordering
// (subjects are canonicalised by content before any index is drawn); replicate
// r draws only from stream (seed, r), so worker count never matters.
// Throws std::invalid_argument on <2 subjects, level outside (0,1),
// n_boot < 100, or inconsistent matrix shapes.
BootstrapBand bootstrap_band(const std::vector<Eigen::MatrixXd>& subject_means,
                             double level, int n_boot, std::uint64_t seed,
                             int n_threads = 0);

// Subject-level difference wave a - b under a baseline-correction strategy:
// "none", "traditional" (per-trial window-mean subtraction), or "regression"
// (pointwise GLM `uv ~ baseline + condition`, fitted slope removed per trial).
// Per-subject condition means are differenced within subject, then averaged.
// Subjects missing either condition are excluded and listed in `warnings`;
// if no subject has both conditions this throws std::runtime_error.
struct DifferenceWave {
  std::string condition_a, condition_b, correction;
  std::vector<std::string> channels;
  SamplingInfo sampling;
  std::vector<std::string> subjects;         // included subjects, sorted
  std::vector<Eigen::MatrixXd> per_subject;  // channels x samples, a - b
  Eigen::MatrixXd grand;                     // mean over included subjects
  std::vector<std::string> warnings;
};

DifferenceWave difference_wave(const EpochSet& e, const std::string& condition_a,
                               const std::string& condition_b,
                               const std::string& correction,
                               const TimeWindow& baseline_window = {0.0, 0.0},
                               int n_threads = 0);

// Per-condition correlation r(t), across subjects, between the subject-average
// baseline feature and the subject-average voltage at t, with a percentile
// bootstrap band. Cells where either variable has zero variance across the
// resampled subjects are missing (NaN), never coerced to 0; band quantiles use
// the defined replicates and go missing when fewer than two exist.
struct CorrelationCurve {
  std::vector<std::string> conditions, channels;
  SamplingInfo sampling;
  std::vector<Eigen::MatrixXd> r, lo, hi;  // per condition, channels x samples
  double level = 0.95;
  int n_boot = 2000;
  std::uint64_t seed = 0;

  int condition_index(const std::string& c) const;  // -1 if absent
};

// Throws std::invalid_argument when any condition has fewer than 3 subjects.
CorrelationCurve baseline_correlation_curve(const EpochSet& e, const TimeWindow& w,
                                            double level = 0.95, int n_boot = 2000,
                                            std::uint64_t seed = 0, int n_threads = 0);

// Long CSV `channel,time_ms,condition,estimate,lo,hi`; map keys label the
// condition column. Missing values are written as empty fields.
void write_band_csv(const std::map<std::string, BootstrapBand>& bands,
                    const std::vector<std::string>& channels,
                    const SamplingInfo& sampling, const std::string& path);

void write_curve_csv(const CorrelationCurve& c, const std::string& path);

}  // namespace erpreg
