#include "erpreg/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "erpreg/baseline.hpp"
#include "erpreg/design.hpp"
#include "erpreg/epochs.hpp"
#include "erpreg/ols.hpp"
#include "erpreg/parallel.hpp"
#include "erpreg/rng.hpp"
#include "erpreg/stats.hpp"

namespace erpreg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Strict weak order on matrix content; ties (identical content) are fine.
bool matrix_less(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a(i), y = b(i);
    if (x < y) return true;
    if (y < x) return false;
  }
  return false;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_or_empty(double v) { return std::isfinite(v) ? fmt_double(v) : ""; }

}  // namespace

BootstrapBand bootstrap_band(const std::vector<Eigen::MatrixXd>& subject_means,
                             double level, int n_boot, std::uint64_t seed,
                             int n_threads) {
  const int n_subj = static_cast<int>(subject_means.size());
  if (n_subj < 2)
    throw std::invalid_argument("bootstrap needs at least 2 subjects; got " +
                                std::to_string(n_subj));
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("band level must lie in (0, 1)");
  if (n_boot < 100)
    throw std::invalid_argument("n_boot must be at least 100");
  const Eigen::Index rows = subject_means.front().rows();
  const Eigen::Index cols = subject_means.front().cols();
  for (const auto& m : subject_means)
    if (m.rows() != rows || m.cols() != cols)
      throw std::invalid_argument("subject matrices must share one shape");

  // Canonical content order makes the band independent of input ordering.
  std::vector<int> canon(static_cast<std::size_t>(n_subj));
  std::iota(canon.begin(), canon.end(), 0);
  std::stable_sort(canon.begin(), canon.end(), [&](int a, int b) {
    return matrix_less(subject_means[static_cast<std::size_t>(a)],
                       subject_means[static_cast<std::size_t>(b)]);
  });

  BootstrapBand band;
  band.level = level;
  band.n_boot = n_boot;
  band.seed = seed;
  band.point = Eigen::MatrixXd::Zero(rows, cols);
  for (const auto& m : subject_means) band.point += m;
  band.point /= static_cast<double>(n_subj);

  std::vector<Eigen::MatrixXd> reps(static_cast<std::size_t>(n_boot));
  parallel_for(
      n_boot,
      [&](int r) {
        auto eng = make_engine(seed, static_cast<std::uint64_t>(r));
        std::uniform_int_distribution<int> pick(0, n_subj - 1);
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(rows, cols);
        for (int s = 0; s < n_subj; ++s)
          acc += subject_means[static_cast<std::size_t>(canon[static_cast<std::size_t>(
              pick(eng))])];
        reps[static_cast<std::size_t>(r)] = acc / static_cast<double>(n_subj);
      },
      n_threads);

  band.lo.resize(rows, cols);
  band.hi.resize(rows, cols);
  std::vector<double> cell(static_cast<std::size_t>(n_boot));
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    for (int r = 0; r < n_boot; ++r) cell[static_cast<std::size_t>(r)] = reps[static_cast<std::size_t>(r)](i);
    std::sort(cell.begin(), cell.end());
    band.lo(i) = quantile_sorted(cell, 0.5 * (1.0 - level));
    band.hi(i) = quantile_sorted(cell, 0.5 * (1.0 + level));
  }
  return band;
}

DifferenceWave difference_wave(const EpochSet& e, const std::string& condition_a,
                               const std::string& condition_b,
                               const std::string& correction,
                               const TimeWindow& baseline_window, int n_threads) {
  const EpochSet* source = &e;
  EpochSet corrected;
  if (correction == "none") {
    // use e as-is
  } else if (correction == "traditional") {
    corrected = apply_traditional(e, baseline_window);
    source = &corrected;
  } else if (correction == "regression") {
    corrected = apply_regression(e, parse_formula("uv ~ baseline + condition"),
                                 baseline_window, n_threads);
    source = &corrected;
  } else {
    throw std::invalid_argument("unknown correction '" + correction +
                                "' (expected none, traditional, or regression)");
  }

  // Trials per (subject, condition-of-interest).
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_subject;
  for (int t = 0; t < source->n_trials(); ++t) {
    const TrialMeta& meta = source->trials()[static_cast<std::size_t>(t)];
    if (meta.condition == condition_a) by_subject[meta.subject].first.push_back(t);
    if (meta.condition == condition_b) by_subject[meta.subject].second.push_back(t);
  }

  DifferenceWave dw;
  dw.condition_a = condition_a;
  dw.condition_b = condition_b;
  dw.correction = correction;
  dw.channels = source->channels();
  dw.sampling = source->sampling();

  const int n_ch = source->n_channels();
  const int n_samp = source->n_samples();
  auto condition_mean = [&](const std::vector<int>& trials) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n_ch, n_samp);
    for (int t : trials)
      for (int c = 0; c < n_ch; ++c) {
        const auto row = source->trial_channel(t, c);
        for (int k = 0; k < n_samp; ++k) acc(c, k) += row[static_cast<std::size_t>(k)];
      }
    return Eigen::MatrixXd(acc / static_cast<double>(trials.size()));
  };

  for (const auto& [subject, trials] : by_subject) {
    if (trials.first.empty() || trials.second.empty()) {
      dw.warnings.push_back("subject " + subject + " lacks condition '" +
                            (trials.first.empty() ? condition_a : condition_b) +
                            "' and was excluded");
      continue;
    }
    dw.subjects.push_back(subject);
    dw.per_subject.push_back(condition_mean(trials.first) - condition_mean(trials.second));
  }
  if (dw.subjects.empty())
    throw std::runtime_error("no subject has both conditions '" + condition_a +
                             "' and '" + condition_b + "'");

  dw.grand = Eigen::MatrixXd::Zero(n_ch, n_samp);
  for (const auto& m : dw.per_subject) dw.grand += m;
  dw.grand /= static_cast<double>(dw.per_subject.size());
  return dw;
}

int CorrelationCurve::condition_index(const std::string& c) const {
  const auto it = std::find(conditions.begin(), conditions.end(), c);
  return it == conditions.end() ? -1 : static_cast<int>(it - conditions.begin());
}

namespace {

// Subject payload for the correlation curve: baseline feature per channel and
// the mean waveform.
struct SubjectWave {
  Eigen::VectorXd baseline;  // n_channels
  Eigen::MatrixXd wave;      // n_channels x n_samples
};

// r across the given subjects at every cell; NaN where a variance vanishes.
Eigen::MatrixXd correlation_cells(const std::vector<SubjectWave>& subjects,
                                  const std::vector<int>& idx) {
  const int n = static_cast<int>(idx.size());
  const Eigen::Index n_ch = subjects.front().wave.rows();
  const Eigen::Index n_samp = subjects.front().wave.cols();
  Eigen::MatrixXd r(n_ch, n_samp);
  for (Eigen::Index c = 0; c < n_ch; ++c) {
    double sb = 0.0, sbb = 0.0;
    Eigen::RowVectorXd sw = Eigen::RowVectorXd::Zero(n_samp);
    Eigen::RowVectorXd sww = Eigen::RowVectorXd::Zero(n_samp);
    Eigen::RowVectorXd sbw = Eigen::RowVectorXd::Zero(n_samp);
    for (int s : idx) {
      const double b = subjects[static_cast<std::size_t>(s)].baseline[c];
      const auto w = subjects[static_cast<std::size_t>(s)].wave.row(c);
      sb += b;
      sbb += b * b;
      sw += w;
      sww += w.cwiseProduct(w);
      sbw += b * w;
    }
    const double var_b = sbb - sb * sb / n;
    for (Eigen::Index k = 0; k < n_samp; ++k) {
      const double var_w = sww[k] - sw[k] * sw[k] / n;
      const double cov = sbw[k] - sb * sw[k] / n;
      const double denom = var_b * var_w;
      r(c, k) = denom > 0.0 ? std::clamp(cov / std::sqrt(denom), -1.0, 1.0) : kNaN;
    }
  }
  return r;
}

}  // namespace

CorrelationCurve baseline_correlation_curve(const EpochSet& e, const TimeWindow& w,
                                            double level, int n_boot,
                                            std::uint64_t seed, int n_threads) {
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("band level must lie in (0, 1)");
  if (n_boot < 100) throw std::invalid_argument("n_boot must be at least 100");

  const BaselineFeature feature = baseline_feature(e, w);
  const int n_ch = e.n_channels();
  const int n_samp = e.n_samples();

  // Collect per-(condition, subject) trial sets.
  std::map<std::string, std::map<std::string, std::vector<int>>> cells;
  for (int t = 0; t < e.n_trials(); ++t) {
    const TrialMeta& meta = e.trials()[static_cast<std::size_t>(t)];
    cells[meta.condition][meta.subject].push_back(t);
  }

  CorrelationCurve curve;
  curve.channels = e.channels();
  curve.sampling = e.sampling();
  curve.level = level;
  curve.n_boot = n_boot;
  curve.seed = seed;

  for (const auto& [condition, subjects_map] : cells) {
    if (subjects_map.size() < 3)
      throw std::invalid_argument("condition '" + condition + "' has only " +
                                  std::to_string(subjects_map.size()) +
                                  " subjects; the correlation needs at least 3");

    std::vector<SubjectWave> subjects;
    subjects.reserve(subjects_map.size());
    for (const auto& [subject, trials] : subjects_map) {
      SubjectWave sw;
      sw.baseline = Eigen::VectorXd::Zero(n_ch);
      sw.wave = Eigen::MatrixXd::Zero(n_ch, n_samp);
      for (int t : trials) {
        for (int c = 0; c < n_ch; ++c) {
          sw.baseline[c] += feature.value(t, c);
          const auto row = e.trial_channel(t, c);
          for (int k = 0; k < n_samp; ++k) sw.wave(c, k) += row[static_cast<std::size_t>(k)];
        }
      }
      sw.baseline /= static_cast<double>(trials.size());
      sw.wave /= static_cast<double>(trials.size());
      subjects.push_back(std::move(sw));
    }

    // Canonical content order, so the band ignores subject naming/ordering.
    std::vector<int> canon(subjects.size());
    std::iota(canon.begin(), canon.end(), 0);
    std::stable_sort(canon.begin(), canon.end(), [&](int a, int b) {
      const auto& sa = subjects[static_cast<std::size_t>(a)];
      const auto& sb = subjects[static_cast<std::size_t>(b)];
      if (matrix_less(sa.baseline, sb.baseline)) return true;
      if (matrix_less(sb.baseline, sa.baseline)) return false;
      return matrix_less(sa.wave, sb.wave);
    });

    std::vector<int> all(subjects.size());
    std::iota(all.begin(), all.end(), 0);
    const Eigen::MatrixXd point = correlation_cells(subjects, all);

    const std::uint64_t cond_seed =
        derive_seed(seed, static_cast<std::uint64_t>(curve.conditions.size()));
    const int n_subj = static_cast<int>(subjects.size());
    std::vector<Eigen::MatrixXd> reps(static_cast<std::size_t>(n_boot));
    parallel_for(
        n_boot,
        [&](int rep) {
          auto eng = make_engine(cond_seed, static_cast<std::uint64_t>(rep));
          std::uniform_int_distribution<int> pick(0, n_subj - 1);
          std::vector<int> idx(static_cast<std::size_t>(n_subj));
          for (auto& i : idx) i = canon[static_cast<std::size_t>(pick(eng))];
          reps[static_cast<std::size_t>(rep)] = correlation_cells(subjects, idx);
        },
        n_threads);

    Eigen::MatrixXd lo(n_ch, n_samp), hi(n_ch, n_samp);
    std::vector<double> cell;
    cell.reserve(static_cast<std::size_t>(n_boot));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_ch) * n_samp; ++i) {
      cell.clear();
      for (const auto& m : reps)
        if (std::isfinite(m(i))) cell.push_back(m(i));
      if (cell.size() < 2) {
        lo(i) = kNaN;
        hi(i) = kNaN;
      } else {
        std::sort(cell.begin(), cell.end());
        lo(i) = quantile_sorted(cell, 0.5 * (1.0 - level));
        hi(i) = quantile_sorted(cell, 0.5 * (1.0 + level));
      }
    }

    curve.conditions.push_back(condition);
    curve.r.push_back(point);
    curve.lo.push_back(std::move(lo));
    curve.hi.push_back(std::move(hi));
  }
  return curve;
}

void write_band_csv(const std::map<std::string, BootstrapBand>& bands,
                    const std::vector<std::string>& channels,
                    const SamplingInfo& sampling, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "channel,time_ms,condition,estimate,lo,hi\n";
  for (const auto& [label, band] : bands) {
    if (band.point.rows() != static_cast<Eigen::Index>(channels.size()) ||
        band.point.cols() != sampling.n_samples)
      throw std::invalid_argument("band shape does not match channels x samples");
    for (std::size_t c = 0; c < channels.size(); ++c)
      for (int k = 0; k < sampling.n_samples; ++k)
        out << channels[c] << ',' << fmt_double(sampling.time_ms(k)) << ',' << label
            << ',' << fmt_or_empty(band.point(static_cast<Eigen::Index>(c), k)) << ','
            << fmt_or_empty(band.lo(static_cast<Eigen::Index>(c), k)) << ','
            << fmt_or_empty(band.hi(static_cast<Eigen::Index>(c), k)) << '\n';
  }
}

void write_curve_csv(const CorrelationCurve& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "channel,time_ms,condition,estimate,lo,hi\n";
  for (std::size_t j = 0; j < c.conditions.size(); ++j)
    for (std::size_t ch = 0; ch < c.channels.size(); ++ch)
      for (int k = 0; k < c.sampling.n_samples; ++k) {
        const auto row = static_cast<Eigen::Index>(ch);
        out << c.channels[ch] << ',' << fmt_double(c.sampling.time_ms(k)) << ','
            << c.conditions[j] << ',' << fmt_or_empty(c.r[j](row, k)) << ','
            << fmt_or_empty(c.lo[j](row, k)) << ',' << fmt_or_empty(c.hi[j](row, k))
            << '\n';
      }
}

}  // namespace erpreg
