#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <doctest.h>

#include "erpreg/baseline.hpp"
#include "erpreg/epochs.hpp"
#include "erpreg/inference.hpp"
#include "erpreg/rng.hpp"
#include "erpreg/stats.hpp"
#include "erpreg/types.hpp"

using namespace erpreg;

namespace {

std::string padded(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
  return buf;
}

// Scalar subjects as 1x1 matrices.
std::vector<Eigen::MatrixXd> scalars(const std::vector<double>& xs) {
  std::vector<Eigen::MatrixXd> out;
  for (double x : xs) {
    Eigen::MatrixXd m(1, 1);
    m << x;
    out.push_back(m);
  }
  return out;
}

// Two-condition epochs: value = subject shift + condition bump after t=0 +
// trial-specific baseline offset everywhere + optional noise.
EpochSet two_condition_epochs(int n_subjects, int n_trials_per_cell, double noise_sd,
                              std::uint64_t seed) {
  const SamplingInfo sampling{250.0, -100.0, 100};  // 4 ms steps, last 296 ms
  const std::vector<std::string> channels = {"Cz", "Pz"};
  auto eng = make_engine(seed, 0);
  std::normal_distribution<double> n01(0.0, 1.0);

  std::vector<TrialMeta> trials;
  std::vector<double> data;
  for (int s = 0; s < n_subjects; ++s) {
    const double subj = 0.5 * n01(eng);
    for (const char* cond : {"neg", "pos"}) {
      const double bump = (cond == std::string("pos")) ? 1.5 : -0.5;
      for (int t = 0; t < n_trials_per_cell; ++t) {
        trials.push_back({padded("s", s + 1), std::string(cond) + padded("-i", t + 1), cond, t});
        const double shift = 0.8 * n01(eng);  // trial-level baseline offset
        for (std::size_t c = 0; c < channels.size(); ++c)
          for (int k = 0; k < sampling.n_samples; ++k) {
            const double post = sampling.time_ms(k) >= 0.0 ? bump : 0.0;
            data.push_back(subj + shift + post + (c == 1 ? 0.25 : 0.0) +
                           noise_sd * n01(eng));
          }
      }
    }
  }
  return EpochSet(std::move(trials), channels, sampling, std::move(data));
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("identical subjects give a zero-width band at the common value") {
  Eigen::MatrixXd m(2, 3);
  m << 1.0, -2.0, 0.5, 4.0, 0.0, -1.0;
  const std::vector<Eigen::MatrixXd> subjects(5, m);
  const BootstrapBand band = bootstrap_band(subjects, 0.95, 200, 9);
  CHECK(band.point == m);
  CHECK(band.lo == m);
  CHECK(band.hi == m);
}

TEST_CASE("band is deterministic and invariant to subject ordering") {
  auto eng = make_engine(17, 3);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Eigen::MatrixXd> subjects;
  for (int s = 0; s < 12; ++s) {
    Eigen::MatrixXd m(1, 8);
    for (int k = 0; k < 8; ++k) m(0, k) = n01(eng);
    subjects.push_back(m);
  }

  const BootstrapBand a = bootstrap_band(subjects, 0.9, 400, 123);
  const BootstrapBand b = bootstrap_band(subjects, 0.9, 400, 123);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);

  std::vector<Eigen::MatrixXd> shuffled = subjects;
  std::rotate(shuffled.begin(), shuffled.begin() + 5, shuffled.end());
  std::swap(shuffled[0], shuffled[3]);
  const BootstrapBand c = bootstrap_band(shuffled, 0.9, 400, 123);
  CHECK(a.lo == c.lo);
  CHECK(a.hi == c.hi);
  CHECK(a.point.isApprox(c.point, 1e-15));

  const BootstrapBand d = bootstrap_band(subjects, 0.9, 400, 124);
  CHECK(a.lo != d.lo);  // different seed, different resamples

  // Worker count cannot change anything.
  const BootstrapBand e1 = bootstrap_band(subjects, 0.9, 400, 123, 1);
  const BootstrapBand e4 = bootstrap_band(subjects, 0.9, 400, 123, 4);
  CHECK(e1.lo == e4.lo);
  CHECK(e1.hi == e4.hi);
}

TEST_CASE("band reproduces a hand-rolled percentile bootstrap") {
  const std::vector<double> values = {0.3, -1.2, 2.4, 0.7, -0.5};
  const auto subjects = scalars(values);
  const int n_boot = 250;
  const std::uint64_t seed = 55;
  const BootstrapBand band = bootstrap_band(subjects, 0.8, n_boot, seed);

  // Same canonical order (ascending scalar content), same per-replicate
  // streams, same linear-interpolation quantiles.
  std::vector<double> sorted_vals = values;
  std::sort(sorted_vals.begin(), sorted_vals.end());
  std::vector<double> means;
  for (int r = 0; r < n_boot; ++r) {
    auto eng = make_engine(seed, static_cast<std::uint64_t>(r));
    std::uniform_int_distribution<int> pick(0, 4);
    double acc = 0.0;
    for (int s = 0; s < 5; ++s) acc += sorted_vals[static_cast<std::size_t>(pick(eng))];
    means.push_back(acc / 5.0);
  }
  std::sort(means.begin(), means.end());
  CHECK(band.lo(0, 0) == quantile_sorted(means, 0.1));
  CHECK(band.hi(0, 0) == quantile_sorted(means, 0.9));

  CHECK_THROWS_AS(bootstrap_band(scalars({1.0}), 0.95, 200, 1), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_band(subjects, 0.0, 200, 1), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_band(subjects, 1.0, 200, 1), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_band(subjects, 0.95, 99, 1), std::invalid_argument);
  auto bad = subjects;
  bad.push_back(Eigen::MatrixXd::Zero(2, 2));
  CHECK_THROWS_AS(bootstrap_band(bad, 0.95, 200, 1), std::invalid_argument);
}

TEST_CASE("95% band covers the true mean of 20 iid Gaussians at nominal rate") {
  const int n_outer = 1000, n_subj = 20, n_boot = 1000;
  int covered = 0;
  for (int rep = 0; rep < n_outer; ++rep) {
    auto eng = make_engine(7100, static_cast<std::uint64_t>(rep));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> xs(n_subj);
    for (auto& x : xs) x = n01(eng);
    const BootstrapBand band =
        bootstrap_band(scalars(xs), 0.95, n_boot, derive_seed(7200, static_cast<std::uint64_t>(rep)));
    if (band.lo(0, 0) <= 0.0 && 0.0 <= band.hi(0, 0)) ++covered;
  }
  const double coverage = static_cast<double>(covered) / n_outer;
  MESSAGE("empirical coverage: ", coverage);
  CHECK(coverage >= 0.92);
  CHECK(coverage <= 0.98);
}

TEST_CASE("83% band non-overlap implies 95% difference-interval exclusion of zero") {
  // Paired design with a shared subject component (rho = 0.3, conservative for
  // condition means measured on the same subjects); delta is chosen so the
  // antecedent is genuinely at stake rather than trivially true or false.
  const int n_sims = 400, n_subj = 20, n_boot = 600;
  const double delta = 0.65, rho = 0.3;
  int antecedent = 0, both = 0;
  for (int rep = 0; rep < n_sims; ++rep) {
    auto eng = make_engine(8300, static_cast<std::uint64_t>(rep));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> a(n_subj), b(n_subj), d(n_subj);
    for (int s = 0; s < n_subj; ++s) {
      const double shared = std::sqrt(rho) * n01(eng);
      a[static_cast<std::size_t>(s)] = delta + shared + std::sqrt(1.0 - rho) * n01(eng);
      b[static_cast<std::size_t>(s)] = shared + std::sqrt(1.0 - rho) * n01(eng);
      d[static_cast<std::size_t>(s)] =
          a[static_cast<std::size_t>(s)] - b[static_cast<std::size_t>(s)];
    }
    const std::uint64_t s1 = derive_seed(8400, static_cast<std::uint64_t>(rep), 1);
    const std::uint64_t s2 = derive_seed(8400, static_cast<std::uint64_t>(rep), 2);
    const std::uint64_t s3 = derive_seed(8400, static_cast<std::uint64_t>(rep), 3);
    const BootstrapBand band_a = bootstrap_band(scalars(a), 0.83, n_boot, s1);
    const BootstrapBand band_b = bootstrap_band(scalars(b), 0.83, n_boot, s2);
    const BootstrapBand band_d = bootstrap_band(scalars(d), 0.95, n_boot, s3);
    const bool disjoint =
        band_a.lo(0, 0) > band_b.hi(0, 0) || band_b.lo(0, 0) > band_a.hi(0, 0);
    const bool excludes_zero = band_d.lo(0, 0) > 0.0 || band_d.hi(0, 0) < 0.0;
    if (disjoint) {
      ++antecedent;
      if (excludes_zero) ++both;
    }
  }
  MESSAGE("antecedent cases: ", antecedent, ", implication held: ", both);
  REQUIRE(antecedent >= 50);  // the simulation actually probes the claim
  CHECK(static_cast<double>(both) / antecedent >= 0.95);
}

TEST_CASE("difference wave: identity, antisymmetry, and exclusions") {
  const EpochSet e = two_condition_epochs(6, 4, 0.3, 41);

  const DifferenceWave same = difference_wave(e, "pos", "pos", "none");
  for (const auto& m : same.per_subject) CHECK(m.norm() == 0.0);
  CHECK(same.grand.norm() == 0.0);

  const DifferenceWave ab = difference_wave(e, "pos", "neg", "none");
  const DifferenceWave ba = difference_wave(e, "neg", "pos", "none");
  CHECK(ab.subjects == ba.subjects);
  CHECK((ab.grand + ba.grand).norm() == 0.0);
  for (std::size_t s = 0; s < ab.per_subject.size(); ++s)
    CHECK((ab.per_subject[s] + ba.per_subject[s]).norm() == 0.0);
  CHECK(ab.subjects.size() == 6);
  CHECK(ab.warnings.empty());
  CHECK(ab.grand.rows() == 2);
  CHECK(ab.grand.cols() == 100);

  // The planted condition bump survives averaging: post-stimulus difference
  // is near 2.0 (= 1.5 - (-0.5)), pre-stimulus near 0.
  const auto post = window_sample_indices(e.sampling(), {100.0, 300.0});
  double mean_post = 0.0;
  for (int k : post) mean_post += ab.grand(0, k);
  mean_post /= static_cast<double>(post.size());
  CHECK(mean_post == doctest::Approx(2.0).epsilon(0.15));

  CHECK_THROWS_AS(difference_wave(e, "pos", "ghost", "none"), std::runtime_error);
  CHECK_THROWS_AS(difference_wave(e, "pos", "neg", "fancy"), std::invalid_argument);

  // A subject lacking one condition is excluded with a warning.
  std::vector<TrialMeta> trials;
  std::vector<double> data;
  for (int t = 0; t < e.n_trials(); ++t) {
    const TrialMeta& meta = e.trials()[static_cast<std::size_t>(t)];
    if (meta.subject == "s001" && meta.condition == "neg") continue;
    trials.push_back(meta);
    for (int c = 0; c < e.n_channels(); ++c) {
      const auto row = e.trial_channel(t, c);
      data.insert(data.end(), row.begin(), row.end());
    }
  }
  const EpochSet pruned(std::move(trials), e.channels(), e.sampling(), std::move(data));
  const DifferenceWave partial = difference_wave(pruned, "pos", "neg", "none");
  CHECK(partial.subjects.size() == 5);
  CHECK(std::find(partial.subjects.begin(), partial.subjects.end(), "s001") ==
        partial.subjects.end());
  REQUIRE(partial.warnings.size() == 1);
  CHECK(partial.warnings[0].find("s001") != std::string::npos);

  // No subject with both conditions at all.
  std::vector<TrialMeta> neg_only_meta;
  std::vector<double> neg_only_data;
  for (int t = 0; t < e.n_trials(); ++t) {
    const TrialMeta& meta = e.trials()[static_cast<std::size_t>(t)];
    if (meta.condition != "neg") continue;
    neg_only_meta.push_back(meta);
    for (int c = 0; c < e.n_channels(); ++c) {
      const auto row = e.trial_channel(t, c);
      neg_only_data.insert(neg_only_data.end(), row.begin(), row.end());
    }
  }
  const EpochSet neg_only(std::move(neg_only_meta), e.channels(), e.sampling(),
                          std::move(neg_only_data));
  CHECK_THROWS_AS(difference_wave(neg_only, "pos", "neg", "none"), std::runtime_error);
}

TEST_CASE("difference wave under traditional correction") {
  const EpochSet e = two_condition_epochs(6, 4, 0.3, 42);
  const TimeWindow w{-100.0, 0.0};

  const DifferenceWave trad = difference_wave(e, "pos", "neg", "traditional", w);
  const DifferenceWave none = difference_wave(e, "pos", "neg", "none");

  // Both conditions are re-zeroed over the window, so the difference averages
  // to zero there.
  const auto base_idx = window_sample_indices(e.sampling(), w);
  for (int c = 0; c < 2; ++c) {
    double acc = 0.0;
    for (int k : base_idx) acc += trad.grand(c, k);
    CHECK(std::abs(acc / static_cast<double>(base_idx.size())) < 1e-12);
  }

  // none - traditional is constant over time per subject/channel, equal to the
  // difference of the subject-mean baseline features.
  const BaselineFeature feature = baseline_feature(e, w);
  for (std::size_t s = 0; s < trad.subjects.size(); ++s) {
    const Eigen::MatrixXd gap = none.per_subject[s] - trad.per_subject[s];
    for (int c = 0; c < 2; ++c) {
      // Feature means per condition for this subject.
      double fa = 0.0, fb = 0.0;
      int na = 0, nb = 0;
      for (int t = 0; t < e.n_trials(); ++t) {
        const TrialMeta& meta = e.trials()[static_cast<std::size_t>(t)];
        if (meta.subject != trad.subjects[s]) continue;
        if (meta.condition == "pos") {
          fa += feature.value(t, c);
          ++na;
        } else if (meta.condition == "neg") {
          fb += feature.value(t, c);
          ++nb;
        }
      }
      const double expected = fa / na - fb / nb;
      for (int k = 0; k < e.n_samples(); ++k)
        CHECK(gap(c, k) == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("difference wave under regression correction runs and stays antisymmetric") {
  const EpochSet e = two_condition_epochs(6, 6, 0.4, 43);
  const TimeWindow w{-100.0, 0.0};
  const DifferenceWave ab = difference_wave(e, "pos", "neg", "regression", w);
  const DifferenceWave ba = difference_wave(e, "neg", "pos", "regression", w);
  CHECK(ab.subjects.size() == 6);
  CHECK(ab.grand.allFinite());
  CHECK((ab.grand + ba.grand).norm() < 1e-12);
  const DifferenceWave again = difference_wave(e, "pos", "neg", "regression", w, 3);
  CHECK(again.grand == ab.grand);  // worker count is invisible
}

TEST_CASE("correlation curve matches a five-point hand computation") {
  // 5 subjects, 1 trial each, 1 channel, 6 samples at 1000 Hz from -2 ms.
  const SamplingInfo sampling{1000.0, -2.0, 6};
  const std::vector<std::string> channels = {"Cz"};
  std::vector<TrialMeta> trials;
  std::vector<double> data;
  const std::vector<std::vector<double>> waves = {
      {1.0, 1.0, 0.2, 1.1, -0.3, 0.0},  {2.0, 2.2, 0.4, 1.9, 0.6, 1.0},
      {-1.0, -0.8, 0.1, -1.2, 0.9, 2.0}, {0.5, 0.3, 0.6, 0.8, -0.7, 3.0},
      {3.0, 3.2, -0.2, 2.4, 0.1, 4.0}};
  for (std::size_t s = 0; s < waves.size(); ++s) {
    trials.push_back({padded("s", static_cast<int>(s) + 1), "i1", "x", 0});
    data.insert(data.end(), waves[s].begin(), waves[s].end());
  }
  const EpochSet e(std::move(trials), channels, sampling, std::move(data));
  const TimeWindow w{-2.0, 0.0};  // first two samples

  const CorrelationCurve curve = baseline_correlation_curve(e, w, 0.95, 200, 3);
  REQUIRE(curve.conditions == std::vector<std::string>{"x"});

  // Textbook Pearson r at each sample, against the two-sample baseline mean.
  std::vector<double> feature;
  for (const auto& wv : waves) feature.push_back(0.5 * (wv[0] + wv[1]));
  for (int k = 0; k < 6; ++k) {
    std::vector<double> at_k;
    for (const auto& wv : waves) at_k.push_back(wv[static_cast<std::size_t>(k)]);
    const auto r = pearson_r(feature, at_k);
    REQUIRE(r.has_value());
    CHECK(curve.r[0](0, k) == doctest::Approx(*r).epsilon(1e-12));
    CHECK(curve.r[0](0, k) >= -1.0);
    CHECK(curve.r[0](0, k) <= 1.0);
  }
}

TEST_CASE("correlation inside the baseline window approaches one without noise") {
  // Window samples equal a per-subject constant: the feature IS the voltage.
  const SamplingInfo sampling{500.0, -100.0, 120};
  const std::vector<std::string> channels = {"Cz"};
  auto eng = make_engine(4040, 0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<TrialMeta> trials;
  std::vector<double> data;
  for (int s = 0; s < 10; ++s) {
    trials.push_back({padded("s", s + 1), "i1", "x", 0});
    const double level = n01(eng);
    for (int k = 0; k < sampling.n_samples; ++k)
      data.push_back(sampling.time_ms(k) < 0.0 ? level : n01(eng));
  }
  const EpochSet e(std::move(trials), channels, sampling, std::move(data));
  const CorrelationCurve curve =
      baseline_correlation_curve(e, {-100.0, 0.0}, 0.95, 200, 11);

  const auto idx = window_sample_indices(sampling, {-100.0, 0.0});
  for (int k : idx) CHECK(curve.r[0](0, k) == doctest::Approx(1.0).epsilon(1e-12));

  // Independence after stimulus onset: r is small and its band usually
  // straddles zero.
  int contains = 0, post = 0;
  for (int k = 0; k < sampling.n_samples; ++k) {
    if (sampling.time_ms(k) < 0.0) continue;
    ++post;
    CHECK(std::abs(curve.r[0](0, k)) < 0.95);
    if (curve.lo[0](0, k) <= 0.0 && 0.0 <= curve.hi[0](0, k)) ++contains;
  }
  CHECK(static_cast<double>(contains) / post > 0.7);
}

TEST_CASE("correlation curve: zero variance gives missing values, not zeros") {
  const SamplingInfo sampling{500.0, -10.0, 10};
  const std::vector<std::string> channels = {"Cz"};
  std::vector<TrialMeta> trials;
  std::vector<double> data;
  for (int s = 0; s < 4; ++s) {
    trials.push_back({padded("s", s + 1), "i1", "x", 0});
    for (int k = 0; k < sampling.n_samples; ++k) data.push_back(3.25);  // identical
  }
  const EpochSet e(std::move(trials), channels, sampling, std::move(data));
  const CorrelationCurve curve = baseline_correlation_curve(e, {-10.0, 0.0}, 0.95, 150, 5);
  for (int k = 0; k < sampling.n_samples; ++k) {
    CHECK(std::isnan(curve.r[0](0, k)));
    CHECK(std::isnan(curve.lo[0](0, k)));
    CHECK(std::isnan(curve.hi[0](0, k)));
  }

  // Fewer than 3 subjects is an error.
  std::vector<TrialMeta> small_meta = {{"s1", "i1", "x", 0}, {"s2", "i1", "x", 0}};
  std::vector<double> small_data(2 * 10, 1.0);
  const EpochSet small(std::move(small_meta), channels, sampling, std::move(small_data));
  CHECK_THROWS_AS(baseline_correlation_curve(small, {-10.0, 0.0}), std::invalid_argument);
}

TEST_CASE("correlation curve is invariant to subject relabeling") {
  const EpochSet e = two_condition_epochs(8, 3, 0.5, 99);
  const CorrelationCurve a = baseline_correlation_curve(e, {-100.0, 0.0}, 0.9, 250, 21);

  // Reverse the subject names; content is untouched.
  std::vector<TrialMeta> trials = e.trials();
  for (auto& meta : trials) {
    const int s = std::stoi(meta.subject.substr(1));
    meta.subject = padded("s", 9 - s);
  }
  const EpochSet renamed(std::move(trials), e.channels(), e.sampling(),
                         std::vector<double>(e.data()));
  const CorrelationCurve b = baseline_correlation_curve(renamed, {-100.0, 0.0}, 0.9, 250, 21);

  for (std::size_t j = 0; j < a.conditions.size(); ++j) {
    CHECK(a.r[j].isApprox(b.r[j], 1e-14));
    CHECK(a.lo[j] == b.lo[j]);
    CHECK(a.hi[j] == b.hi[j]);
  }
}

TEST_CASE("band and curve CSV exports") {
  const EpochSet e = two_condition_epochs(5, 2, 0.2, 13);
  const DifferenceWave dw = difference_wave(e, "pos", "neg", "none");
  const BootstrapBand band = bootstrap_band(dw.per_subject, 0.95, 200, 77);

  namespace fs = std::filesystem;
  const auto band_path = fs::temp_directory_path() / "erpreg_band.csv";
  write_band_csv({{"pos-neg", band}}, dw.channels, dw.sampling, band_path.string());
  std::ifstream in(band_path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "channel,time_ms,condition,estimate,lo,hi");
  int rows = 0;
  std::string line;
  bool saw_label = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",pos-neg,") != std::string::npos) saw_label = true;
  }
  CHECK(rows == 2 * 100);
  CHECK(saw_label);
  fs::remove(band_path);

  const CorrelationCurve curve = baseline_correlation_curve(e, {-100.0, 0.0}, 0.95, 150, 3);
  const auto curve_path = fs::temp_directory_path() / "erpreg_curve.csv";
  write_curve_csv(curve, curve_path.string());
  std::ifstream cin_(curve_path);
  std::getline(cin_, header);
  CHECK(header == "channel,time_ms,condition,estimate,lo,hi");
  rows = 0;
  while (std::getline(cin_, line)) ++rows;
  CHECK(rows == 2 * 100 * 2);  // conditions x channels x samples
  fs::remove(curve_path);
}

}  // TEST_SUITE
