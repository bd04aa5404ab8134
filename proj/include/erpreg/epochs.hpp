#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/types.hpp"

namespace erpreg {

struct LoadReport {
  int n_trials_loaded = 0;
  int n_trials_dropped_nan = 0;  // trials containing NaN are dropped, not imputed
};

struct LoadResult {
  EpochSet epochs;
  RoiMap roi_map;  // empty when the sidecar has none
  LoadReport report;
};

// Reads long CSV `subj,item,condition,trial,channel,time_ms,uv` plus the
// `.meta.json` sidecar (same stem) carrying rate_hz and an optional roi_map.
// Throws std::runtime_error on missing columns, ragged trials, or a time grid
// inconsistent with rate_hz.
LoadResult load_epochs(const std::string& csv_path);

// Writes the long CSV and sidecar; load_epochs on the output reproduces the
// tensor bit-for-bit (values printed in shortest round-trip form).
void save_epochs(const EpochSet& e, const std::string& csv_path,
                 const RoiMap& roi_map = {});

struct RejectedTrial {
  std::string subject;
  std::string item;
  int trial_index = 0;
  double max_abs_uv = 0.0;
};

struct RejectionReport {
  double threshold_uv = 0.0;
  std::vector<RejectedTrial> dropped;
  std::map<std::string, int> dropped_per_condition;
  int n_kept = 0;

  void write_csv(const std::string& path) const;  // subj,item,trial,max_abs_uv
};

// Drops every trial whose max |value| over all channels and samples exceeds
// threshold_uv. Throws std::runtime_error if nothing survives.
std::pair<EpochSet, RejectionReport> reject_artifacts(const EpochSet& e,
                                                      double threshold_uv);

// Indices of samples whose time t satisfies start <= t < end (half-open, with
// grid tolerance kTimeTolMs). Throws std::invalid_argument when the window is
// malformed or contains no samples.
std::vector<int> window_sample_indices(const SamplingInfo& s, const TimeWindow& w);

// One row per (trial, channel): mean voltage over the window.
TrialTable window_average(const EpochSet& e, const TimeWindow& w);

// Collapses channels into ROI means; rows become (trial, ROI). Unmapped
// channels are dropped. Throws when a mapped ROI has no channel present.
TrialTable roi_average(const TrialTable& t, const RoiMap& m);

// Two-stage average: trials -> subject means -> unweighted mean over subjects.
struct GrandAverage {
  std::vector<std::string> conditions;
  std::vector<std::string> channels;
  SamplingInfo sampling;
  // subject_means[cond] maps subject -> (n_channels x n_samples)
  std::vector<std::map<std::string, Eigen::MatrixXd>> subject_means;
  std::vector<Eigen::MatrixXd> grand;  // per condition, n_channels x n_samples
  std::vector<std::string> warnings;   // subjects missing a condition

  int condition_index(const std::string& c) const;
};

GrandAverage grand_average(const EpochSet& e);

}  // namespace erpreg
