#pragma once

#include <string>
#include <vector>

#include "erpreg/epochs.hpp"
#include "erpreg/types.hpp"

namespace erpreg {

// Per-(trial, channel) mean voltage over a fixed window, kept alongside the
// metadata needed to join it back onto trial tables or export it.
struct BaselineFeature {
  TimeWindow window;
  std::vector<TrialMeta> trials;
  std::vector<std::string> channels;
  std::vector<double> values;  // trial-major, then channel

  double value(int trial, int channel) const {
    return values[static_cast<std::size_t>(trial) * channels.size() + channel];
  }
};

// Mean voltage over w for every retained (trial, channel).
BaselineFeature baseline_feature(const EpochSet& e, const TimeWindow& w);

// Classic subtraction: removes each (trial, channel)'s window mean from every
// sample of that trial/channel. Returns a new EpochSet.
EpochSet apply_traditional(const EpochSet& e, const TimeWindow& w);

// log(power_window) - log(power_baseline). Multiply by 10 for decibels.
// Throws std::domain_error unless both powers are strictly positive.
double log_ratio_normalize(double power_window, double power_baseline);

// Named windows: pre100=[-100,0), pre200=[-200,0), pre500=[-500,0),
// post200=[0,200), whole=[epoch start, one step past the last sample).
// Throws std::invalid_argument for unknown names.
TimeWindow window_preset(const std::string& name, const SamplingInfo& s);

// Writes `subj,item,trial,channel,baseline_uv`.
void write_baseline_csv(const BaselineFeature& f, const std::string& path);

// Adds source's value column to t as covariates[name], joined on
// (subject, item, trial, unit). Every row of t must find a match.
TrialTable attach_covariate(const TrialTable& t, const TrialTable& source,
                            const std::string& name);

// Convenience pipeline: window-average the analysis window, attach the
// baseline-window mean as covariates["baseline"], optionally collapse both to
// ROIs first. This is the regression-ready table the paper's models consume.
TrialTable make_analysis_table(const EpochSet& e, const TimeWindow& analysis,
                               const TimeWindow& baseline_w,
                               const RoiMap* rois = nullptr);

}  // namespace erpreg
