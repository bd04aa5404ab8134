#include "erpreg/epochs.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

namespace erpreg {

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
  out.append(buf, res.ptr);
}

double parse_double(std::string_view s, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error(std::string("cannot parse ") + what + " value '" +
                             std::string(s) + "'");
  return v;
}

int parse_int(std::string_view s, const char* what) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error(std::string("cannot parse ") + what + " value '" +
                             std::string(s) + "'");
  return v;
}

std::string meta_path_for(const std::string& csv_path) {
  if (csv_path.size() >= 4 && csv_path.substr(csv_path.size() - 4) == ".csv")
    return csv_path.substr(0, csv_path.size() - 4) + ".meta.json";
  return csv_path + ".meta.json";
}

struct Interner {
  std::unordered_map<std::string, int> index;
  std::vector<std::string> names;
  int get(std::string_view s) {
    auto it = index.find(std::string(s));
    if (it != index.end()) return it->second;
    int id = static_cast<int>(names.size());
    names.emplace_back(s);
    index.emplace(names.back(), id);
    return id;
  }
};

}  // namespace

EpochSet::EpochSet(std::vector<TrialMeta> trials, std::vector<std::string> channels,
                   SamplingInfo sampling, std::vector<double> data)
    : trials_(std::move(trials)),
      channels_(std::move(channels)),
      sampling_(sampling),
      data_(std::move(data)) {
  if (sampling_.rate_hz <= 0.0) throw std::invalid_argument("rate_hz must be > 0");
  if (sampling_.n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  const std::size_t expect = trials_.size() * channels_.size() *
                             static_cast<std::size_t>(sampling_.n_samples);
  if (data_.size() != expect)
    throw std::invalid_argument("EpochSet data size does not match dimensions");
  std::set<std::tuple<std::string, std::string, int>> keys;
  for (const auto& t : trials_) {
    if (!keys.insert({t.subject, t.item, t.trial_index}).second)
      throw std::invalid_argument("duplicate (subject,item,trial) key in EpochSet");
  }
}

int EpochSet::channel_index(const std::string& name) const {
  auto it = std::find(channels_.begin(), channels_.end(), name);
  return it == channels_.end() ? -1 : static_cast<int>(it - channels_.begin());
}

LoadResult load_epochs(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty file " + csv_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subj,item,condition,trial,channel,time_ms,uv")
    throw std::runtime_error("bad header in " + csv_path +
                             " (expected subj,item,condition,trial,channel,time_ms,uv)");

  struct RawRow {
    int subj, item, cond, trial, chan;
    double time_ms, uv;
  };
  std::vector<RawRow> rows;
  Interner subjects, items, conds, chans;

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string_view, 7> f;
    std::string_view sv(line);
    std::size_t start = 0;
    int nf = 0;
    for (std::size_t i = 0; i <= sv.size(); ++i) {
      if (i == sv.size() || sv[i] == ',') {
        if (nf >= 7) throw std::runtime_error("too many columns at line " +
                                              std::to_string(lineno));
        f[nf++] = sv.substr(start, i - start);
        start = i + 1;
      }
    }
    if (nf != 7)
      throw std::runtime_error("expected 7 columns at line " + std::to_string(lineno));
    RawRow r;
    r.subj = subjects.get(f[0]);
    r.item = items.get(f[1]);
    r.cond = conds.get(f[2]);
    r.trial = parse_int(f[3], "trial");
    r.chan = chans.get(f[4]);
    r.time_ms = parse_double(f[5], "time_ms");
    r.uv = parse_double(f[6], "uv");
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error("no data rows in " + csv_path);

  // Sidecar with rate_hz (+ optional roi_map)
  const std::string mp = meta_path_for(csv_path);
  std::ifstream meta_in(mp);
  if (!meta_in) throw std::runtime_error("missing sidecar " + mp);
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  if (!meta.contains("rate_hz")) throw std::runtime_error("sidecar lacks rate_hz: " + mp);
  const double rate_hz = meta["rate_hz"].get<double>();
  if (rate_hz <= 0.0) throw std::runtime_error("rate_hz must be positive in " + mp);
  RoiMap roi_map;
  if (meta.contains("roi_map"))
    for (auto& [k, v] : meta["roi_map"].items()) roi_map[k] = v.get<std::string>();

  // Sample grid from distinct times, merged within tolerance
  std::set<double> time_set;
  for (const auto& r : rows) time_set.insert(r.time_ms);
  std::vector<double> grid;
  for (double t : time_set) {
    if (grid.empty() || t - grid.back() > kTimeTolMs) grid.push_back(t);
  }
  const double step = 1000.0 / rate_hz;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (std::abs((grid[k] - grid[k - 1]) - step) > kTimeTolMs)
      throw std::runtime_error(
          "time grid inconsistent with rate_hz: spacing " +
          std::to_string(grid[k] - grid[k - 1]) + " ms vs expected " +
          std::to_string(step) + " ms");
  }
  const int n_samples = static_cast<int>(grid.size());
  auto sample_of = [&](double t) {
    auto it = std::lower_bound(grid.begin(), grid.end(), t - kTimeTolMs);
    return static_cast<int>(it - grid.begin());
  };

  // Channels sorted by name for a deterministic axis
  std::vector<int> chan_order(chans.names.size());
  for (std::size_t i = 0; i < chan_order.size(); ++i) chan_order[i] = static_cast<int>(i);
  std::sort(chan_order.begin(), chan_order.end(),
            [&](int a, int b) { return chans.names[a] < chans.names[b]; });
  std::vector<int> chan_slot(chans.names.size());
  std::vector<std::string> channel_names;
  for (std::size_t i = 0; i < chan_order.size(); ++i) {
    chan_slot[chan_order[i]] = static_cast<int>(i);
    channel_names.push_back(chans.names[chan_order[i]]);
  }
  const int n_channels = static_cast<int>(channel_names.size());

  for (const auto& [ch, roi] : roi_map)
    if (std::find(channel_names.begin(), channel_names.end(), ch) == channel_names.end())
      throw std::runtime_error("roi_map channel '" + ch + "' not present in data");

  // Trials sorted by (subject, item, trial)
  std::map<std::tuple<std::string, std::string, int>, int> trial_slot;
  for (const auto& r : rows)
    trial_slot.try_emplace({subjects.names[r.subj], items.names[r.item], r.trial}, 0);
  {
    int slot = 0;
    for (auto& [key, v] : trial_slot) v = slot++;
  }
  const int n_trials = static_cast<int>(trial_slot.size());

  std::vector<TrialMeta> metas(n_trials);
  std::vector<char> meta_set(n_trials, 0);
  const std::size_t cells = static_cast<std::size_t>(n_channels) * n_samples;
  std::vector<double> data(static_cast<std::size_t>(n_trials) * cells, 0.0);
  std::vector<char> filled(data.size(), 0);

  for (const auto& r : rows) {
    const int t = trial_slot.at({subjects.names[r.subj], items.names[r.item], r.trial});
    if (!meta_set[t]) {
      metas[t] = {subjects.names[r.subj], items.names[r.item], conds.names[r.cond],
                  r.trial};
      meta_set[t] = 1;
    } else if (metas[t].condition != conds.names[r.cond]) {
      throw std::runtime_error("trial (" + metas[t].subject + "," + metas[t].item + "," +
                               std::to_string(r.trial) + ") has conflicting conditions");
    }
    const std::size_t idx =
        (static_cast<std::size_t>(t) * n_channels + chan_slot[r.chan]) * n_samples +
        sample_of(r.time_ms);
    if (filled[idx])
      throw std::runtime_error("duplicate cell for trial (" + metas[t].subject + "," +
                               metas[t].item + "," + std::to_string(r.trial) + ")");
    data[idx] = r.uv;
    filled[idx] = 1;
  }

  for (int t = 0; t < n_trials; ++t) {
    const std::size_t base = static_cast<std::size_t>(t) * cells;
    for (std::size_t c = 0; c < cells; ++c) {
      if (!filled[base + c])
        throw std::runtime_error("ragged trial (" + metas[t].subject + "," +
                                 metas[t].item + "," +
                                 std::to_string(metas[t].trial_index) +
                                 "): missing channel x sample cells");
    }
  }

  // NaN-bearing trials are dropped, never imputed
  std::vector<char> keep(n_trials, 1);
  int n_nan = 0;
  for (int t = 0; t < n_trials; ++t) {
    const std::size_t base = static_cast<std::size_t>(t) * cells;
    for (std::size_t c = 0; c < cells; ++c) {
      if (std::isnan(data[base + c])) {
        keep[t] = 0;
        ++n_nan;
        break;
      }
    }
  }

  std::vector<TrialMeta> kept_meta;
  std::vector<double> kept_data;
  kept_data.reserve(data.size());
  for (int t = 0; t < n_trials; ++t) {
    if (!keep[t]) continue;
    kept_meta.push_back(metas[t]);
    const std::size_t base = static_cast<std::size_t>(t) * cells;
    kept_data.insert(kept_data.end(), data.begin() + base, data.begin() + base + cells);
  }
  if (kept_meta.empty()) throw std::runtime_error("all trials NaN-dropped in " + csv_path);

  SamplingInfo s;
  s.rate_hz = rate_hz;
  s.epoch_start_ms = grid.front();
  s.n_samples = n_samples;

  LoadResult out{EpochSet(std::move(kept_meta), std::move(channel_names), s,
                          std::move(kept_data)),
                 std::move(roi_map),
                 {n_trials - n_nan, n_nan}};
  return out;
}

void save_epochs(const EpochSet& e, const std::string& csv_path, const RoiMap& roi_map) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out << "subj,item,condition,trial,channel,time_ms,uv\n";
  std::string buf;
  buf.reserve(1 << 20);
  for (int t = 0; t < e.n_trials(); ++t) {
    const TrialMeta& m = e.trials()[t];
    for (int c = 0; c < e.n_channels(); ++c) {
      for (int k = 0; k < e.n_samples(); ++k) {
        buf += m.subject;
        buf += ',';
        buf += m.item;
        buf += ',';
        buf += m.condition;
        buf += ',';
        buf += std::to_string(m.trial_index);
        buf += ',';
        buf += e.channels()[c];
        buf += ',';
        append_double(buf, e.sampling().time_ms(k));
        buf += ',';
        append_double(buf, e.value(t, c, k));
        buf += '\n';
        if (buf.size() > (1 << 20) - 256) {
          out << buf;
          buf.clear();
        }
      }
    }
  }
  out << buf;

  nlohmann::json meta;
  meta["rate_hz"] = e.sampling().rate_hz;
  if (!roi_map.empty()) {
    nlohmann::json rm = nlohmann::json::object();
    for (const auto& [ch, roi] : roi_map) rm[ch] = roi;
    meta["roi_map"] = rm;
  }
  std::ofstream meta_out(meta_path_for(csv_path));
  if (!meta_out) throw std::runtime_error("cannot write sidecar for " + csv_path);
  meta_out << meta.dump(2) << "\n";
}

void RejectionReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "subj,item,trial,max_abs_uv\n";
  for (const auto& d : dropped) {
    std::string buf = d.subject + "," + d.item + "," + std::to_string(d.trial_index) + ",";
    append_double(buf, d.max_abs_uv);
    out << buf << "\n";
  }
}

std::pair<EpochSet, RejectionReport> reject_artifacts(const EpochSet& e,
                                                      double threshold_uv) {
  if (threshold_uv <= 0.0) throw std::invalid_argument("threshold_uv must be > 0");
  RejectionReport report;
  report.threshold_uv = threshold_uv;

  const std::size_t cells =
      static_cast<std::size_t>(e.n_channels()) * e.n_samples();
  std::vector<char> keep(e.n_trials(), 1);
  for (int t = 0; t < e.n_trials(); ++t) {
    double max_abs = 0.0;
    for (int c = 0; c < e.n_channels(); ++c)
      for (double v : e.trial_channel(t, c)) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs > threshold_uv) {
      keep[t] = 0;
      const TrialMeta& m = e.trials()[t];
      report.dropped.push_back({m.subject, m.item, m.trial_index, max_abs});
      report.dropped_per_condition[m.condition] += 1;
    }
  }

  std::vector<TrialMeta> kept_meta;
  std::vector<double> kept_data;
  for (int t = 0; t < e.n_trials(); ++t) {
    if (!keep[t]) continue;
    kept_meta.push_back(e.trials()[t]);
    for (int c = 0; c < e.n_channels(); ++c) {
      auto span = e.trial_channel(t, c);
      kept_data.insert(kept_data.end(), span.begin(), span.end());
    }
  }
  if (kept_meta.empty())
    throw std::runtime_error("artifact rejection removed every trial (threshold " +
                             std::to_string(threshold_uv) + " uV)");
  report.n_kept = static_cast<int>(kept_meta.size());
  (void)cells;
  return {EpochSet(std::move(kept_meta), std::vector<std::string>(e.channels()),
                   e.sampling(), std::move(kept_data)),
          std::move(report)};
}

std::vector<int> window_sample_indices(const SamplingInfo& s, const TimeWindow& w) {
  if (!(w.start_ms < w.end_ms))
    throw std::invalid_argument("time window start must be < end");
  std::vector<int> idx;
  for (int k = 0; k < s.n_samples; ++k) {
    const double t = s.time_ms(k);
    if (t >= w.start_ms - kTimeTolMs && t < w.end_ms - kTimeTolMs) idx.push_back(k);
  }
  if (idx.empty())
    throw std::invalid_argument("window [" + std::to_string(w.start_ms) + "," +
                                std::to_string(w.end_ms) + ") contains no samples");
  return idx;
}

TrialTable window_average(const EpochSet& e, const TimeWindow& w) {
  const std::vector<int> idx = window_sample_indices(e.sampling(), w);
  TrialTable t;
  t.unit_kind = "channel";
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (int tr = 0; tr < e.n_trials(); ++tr) {
    const TrialMeta& m = e.trials()[tr];
    for (int c = 0; c < e.n_channels(); ++c) {
      auto samples = e.trial_channel(tr, c);
      double sum = 0.0;
      for (int k : idx) sum += samples[k];
      t.subject.push_back(m.subject);
      t.item.push_back(m.item);
      t.condition.push_back(m.condition);
      t.trial_index.push_back(m.trial_index);
      t.unit.push_back(e.channels()[c]);
      t.value.push_back(sum * inv);
    }
  }
  return t;
}

TrialTable roi_average(const TrialTable& t, const RoiMap& m) {
  if (t.unit_kind != "channel")
    throw std::invalid_argument("roi_average expects a channel-level table");
  if (m.empty()) throw std::invalid_argument("empty ROI map");

  std::set<std::string> present_units(t.unit.begin(), t.unit.end());
  std::map<std::string, int> roi_presence;
  for (const auto& [ch, roi] : m) {
    roi_presence.try_emplace(roi, 0);
    if (present_units.count(ch)) roi_presence[roi] += 1;
  }
  for (const auto& [roi, n] : roi_presence)
    if (n == 0)
      throw std::runtime_error("ROI '" + roi + "' has no channels present in the table");

  // Group rows by (trial key, roi), keeping first-appearance trial order
  struct Accum {
    double sum = 0.0;
    int n = 0;
    std::size_t first_row = 0;
  };
  std::map<std::tuple<std::string, std::string, int, std::string>, Accum> groups;
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    auto it = m.find(t.unit[i]);
    if (it == m.end()) continue;  // unmapped channels dropped
    auto key = std::make_tuple(t.subject[i], t.item[i], t.trial_index[i], it->second);
    auto [g, inserted] = groups.try_emplace(key);
    if (inserted) g->second.first_row = i;
    g->second.sum += t.value[i];
    g->second.n += 1;
  }
  if (groups.empty()) throw std::runtime_error("no channel of the table appears in the ROI map");

  TrialTable out;
  out.response_name = t.response_name;
  out.unit_kind = "roi";
  for (const auto& [key, acc] : groups) {
    const std::size_t i = acc.first_row;
    out.subject.push_back(t.subject[i]);
    out.item.push_back(t.item[i]);
    out.condition.push_back(t.condition[i]);
    out.trial_index.push_back(t.trial_index[i]);
    out.unit.push_back(std::get<3>(key));
    out.value.push_back(acc.sum / acc.n);
  }
  return out;
}

int GrandAverage::condition_index(const std::string& c) const {
  auto it = std::find(conditions.begin(), conditions.end(), c);
  return it == conditions.end() ? -1 : static_cast<int>(it - conditions.begin());
}

GrandAverage grand_average(const EpochSet& e) {
  GrandAverage g;
  g.channels = e.channels();
  g.sampling = e.sampling();

  std::set<std::string> conds, subjects;
  for (const auto& m : e.trials()) {
    conds.insert(m.condition);
    subjects.insert(m.subject);
  }
  g.conditions.assign(conds.begin(), conds.end());

  const int C = e.n_channels();
  const int S = e.n_samples();
  for (const auto& cond : g.conditions) {
    std::map<std::string, Eigen::MatrixXd> sums;
    std::map<std::string, int> counts;
    for (int t = 0; t < e.n_trials(); ++t) {
      const TrialMeta& m = e.trials()[t];
      if (m.condition != cond) continue;
      auto [it, inserted] = sums.try_emplace(m.subject, Eigen::MatrixXd::Zero(C, S));
      for (int c = 0; c < C; ++c) {
        auto samples = e.trial_channel(t, c);
        for (int k = 0; k < S; ++k) it->second(c, k) += samples[k];
      }
      counts[m.subject] += 1;
    }
    std::map<std::string, Eigen::MatrixXd> subj_means;
    Eigen::MatrixXd grand = Eigen::MatrixXd::Zero(C, S);
    for (auto& [subj, sum] : sums) {
      Eigen::MatrixXd mean = sum / static_cast<double>(counts[subj]);
      grand += mean;
      subj_means.emplace(subj, std::move(mean));
    }
    grand /= static_cast<double>(subj_means.size());
    for (const auto& subj : subjects)
      if (!subj_means.count(subj))
        g.warnings.push_back("subject '" + subj + "' has no trials in condition '" +
                             cond + "'; excluded from its grand average");
    g.subject_means.push_back(std::move(subj_means));
    g.grand.push_back(std::move(grand));
  }
  return g;
}

}  // namespace erpreg
