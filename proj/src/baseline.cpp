#include "erpreg/baseline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <tuple>

namespace erpreg {

BaselineFeature baseline_feature(const EpochSet& e, const TimeWindow& w) {
  const std::vector<int> idx = window_sample_indices(e.sampling(), w);
  BaselineFeature f;
  f.window = w;
  f.trials = e.trials();
  f.channels = e.channels();
  f.values.reserve(static_cast<std::size_t>(e.n_trials()) * e.n_channels());
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (int t = 0; t < e.n_trials(); ++t) {
    for (int c = 0; c < e.n_channels(); ++c) {
      auto samples = e.trial_channel(t, c);
      double sum = 0.0;
      for (int k : idx) sum += samples[k];
      f.values.push_back(sum * inv);
    }
  }
  return f;
}

EpochSet apply_traditional(const EpochSet& e, const TimeWindow& w) {
  const BaselineFeature f = baseline_feature(e, w);
  std::vector<double> data(e.data());
  const int S = e.n_samples();
  for (int t = 0; t < e.n_trials(); ++t) {
    for (int c = 0; c < e.n_channels(); ++c) {
      const double b = f.value(t, c);
      double* p = data.data() + (static_cast<std::size_t>(t) * e.n_channels() + c) * S;
      for (int k = 0; k < S; ++k) p[k] -= b;
    }
  }
  return EpochSet(e.trials(), e.channels(), e.sampling(), std::move(data));
}

double log_ratio_normalize(double power_window, double power_baseline) {
  if (!(power_window > 0.0) || !(power_baseline > 0.0))
    throw std::domain_error("log-ratio normalization needs strictly positive powers");
  return std::log(power_window) - std::log(power_baseline);
}

TimeWindow window_preset(const std::string& name, const SamplingInfo& s) {
  if (name == "pre100") return {-100.0, 0.0};
  if (name == "pre200") return {-200.0, 0.0};
  if (name == "pre500") return {-500.0, 0.0};
  if (name == "post200") return {0.0, 200.0};
  if (name == "whole") return {s.epoch_start_ms, s.last_time_ms() + s.step_ms()};
  throw std::invalid_argument("unknown window preset '" + name +
                              "' (want pre100, pre200, pre500, post200, or whole)");
}

void write_baseline_csv(const BaselineFeature& f, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "subj,item,trial,channel,baseline_uv\n";
  const int C = static_cast<int>(f.channels.size());
  for (std::size_t t = 0; t < f.trials.size(); ++t) {
    const TrialMeta& m = f.trials[t];
    for (int c = 0; c < C; ++c) {
      char buf[64];
      auto res = std::to_chars(buf, buf + sizeof(buf),
                               f.value(static_cast<int>(t), c));
      out << m.subject << ',' << m.item << ',' << m.trial_index << ','
          << f.channels[c] << ',' << std::string_view(buf, res.ptr - buf) << '\n';
    }
  }
}

TrialTable attach_covariate(const TrialTable& t, const TrialTable& source,
                            const std::string& name) {
  if (t.unit_kind != source.unit_kind)
    throw std::invalid_argument("covariate table unit kind mismatch (" + t.unit_kind +
                                " vs " + source.unit_kind + ")");
  std::map<std::tuple<std::string, std::string, int, std::string>, double> lookup;
  for (std::size_t i = 0; i < source.n_rows(); ++i)
    lookup[{source.subject[i], source.item[i], source.trial_index[i], source.unit[i]}] =
        source.value[i];

  TrialTable out = t;
  std::vector<double> col;
  col.reserve(t.n_rows());
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    auto it = lookup.find({t.subject[i], t.item[i], t.trial_index[i], t.unit[i]});
    if (it == lookup.end())
      throw std::runtime_error("no '" + name + "' value for trial (" + t.subject[i] +
                               "," + t.item[i] + "," + std::to_string(t.trial_index[i]) +
                               ") unit " + t.unit[i]);
    col.push_back(it->second);
  }
  out.covariates[name] = std::move(col);
  return out;
}

TrialTable make_analysis_table(const EpochSet& e, const TimeWindow& analysis,
                               const TimeWindow& baseline_w, const RoiMap* rois) {
  TrialTable response = window_average(e, analysis);
  TrialTable baseline_t = window_average(e, baseline_w);
  if (rois != nullptr) {
    response = roi_average(response, *rois);
    baseline_t = roi_average(baseline_t, *rois);
  }
  return attach_covariate(response, baseline_t, "baseline");
}

}  // namespace erpreg
