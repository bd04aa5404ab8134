#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace erpreg {

// Sample grid of an epoch. Sample k sits at epoch_start_ms + k * (1000 / rate_hz).
struct SamplingInfo {
  double rate_hz = 0.0;
  double epoch_start_ms = 0.0;
  int n_samples = 0;

  double step_ms() const { return 1000.0 / rate_hz; }
  double time_ms(int k) const { return epoch_start_ms + k * step_ms(); }
  double last_time_ms() const { return time_ms(n_samples - 1); }
};

struct TrialMeta {
  std::string subject;
  std::string item;
  std::string condition;
  int trial_index = 0;
};

// Half-open interval [start_ms, end_ms) on the epoch time axis.
struct TimeWindow {
  double start_ms = 0.0;
  double end_ms = 0.0;
};

// Grid-membership tolerance for mapping window edges to samples (ms).
inline constexpr double kTimeTolMs = 1e-6;

// channel name -> ROI label; channels absent from the map are excluded.
using RoiMap = std::map<std::string, std::string>;

// Immutable trials x channels x samples voltage tensor (microvolts) with
// trial metadata. All operations on it are pure and return new objects.
class EpochSet {
 public:
  EpochSet() = default;
  // data laid out as (trial * n_channels + channel) * n_samples + sample.
  // Throws std::invalid_argument on dimension mismatch or duplicate trial keys.
  EpochSet(std::vector<TrialMeta> trials, std::vector<std::string> channels,
           SamplingInfo sampling, std::vector<double> data);

  int n_trials() const { return static_cast<int>(trials_.size()); }
  int n_channels() const { return static_cast<int>(channels_.size()); }
  int n_samples() const { return sampling_.n_samples; }

  double value(int trial, int channel, int sample) const {
    return data_[(static_cast<std::size_t>(trial) * channels_.size() + channel) *
                     sampling_.n_samples +
                 sample];
  }
  std::span<const double> trial_channel(int trial, int channel) const {
    return {data_.data() + (static_cast<std::size_t>(trial) * channels_.size() + channel) *
                               sampling_.n_samples,
            static_cast<std::size_t>(sampling_.n_samples)};
  }

  const std::vector<TrialMeta>& trials() const { return trials_; }
  const std::vector<std::string>& channels() const { return channels_; }
  const SamplingInfo& sampling() const { return sampling_; }
  const std::vector<double>& data() const { return data_; }

  int channel_index(const std::string& name) const;  // -1 if absent

 private:
  std::vector<TrialMeta> trials_;
  std::vector<std::string> channels_;
  SamplingInfo sampling_;
  std::vector<double> data_;
};

// Long-format view of window/ROI-averaged observations: the regression-ready
// table. `unit` holds a channel name or an ROI label depending on unit_kind.
// Numeric covariates (e.g. "baseline") live in `covariates`, keyed by name.
struct TrialTable {
  std::string response_name = "uv";
  std::string unit_kind = "channel";  // "channel" or "roi"
  std::vector<std::string> subject;
  std::vector<std::string> item;
  std::vector<std::string> condition;
  std::vector<int> trial_index;
  std::vector<std::string> unit;
  std::vector<double> value;
  std::map<std::string, std::vector<double>> covariates;

  std::size_t n_rows() const { return value.size(); }
};

}  // namespace erpreg
