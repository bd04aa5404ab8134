#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "erpreg/epochs.hpp"
#include "erpreg/rng.hpp"
#include "erpreg/types.hpp"

using namespace erpreg;
namespace fs = std::filesystem;

namespace {

// Small deterministic fixture: value(t,c,k) encodes its own coordinates, so
// any indexing slip shows up as the wrong decimal digits.
EpochSet make_coded_epochs(int n_subj, int items_per_subj, int n_channels,
                           int n_samples, double rate_hz = 500.0,
                           double start_ms = -200.0) {
  std::vector<TrialMeta> metas;
  std::vector<double> data;
  int trial = 0;
  for (int s = 0; s < n_subj; ++s) {
    for (int i = 0; i < items_per_subj; ++i) {
      TrialMeta m;
      m.subject = "s" + std::to_string(s + 1);
      m.item = "i" + std::to_string(i + 1);
      m.condition = (i % 2 == 0) ? "a" : "b";
      m.trial_index = trial;
      metas.push_back(m);
      for (int c = 0; c < n_channels; ++c)
        for (int k = 0; k < n_samples; ++k)
          data.push_back(trial * 10000.0 + c * 100.0 + k * 0.25);
      ++trial;
    }
  }
  std::vector<std::string> channels;
  for (int c = 0; c < n_channels; ++c) channels.push_back("c" + std::to_string(c + 1));
  return EpochSet(std::move(metas), std::move(channels),
                  SamplingInfo{rate_hz, start_ms, n_samples}, std::move(data));
}

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "erpreg_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

std::string basic_sidecar() { return "{\"rate_hz\": 500.0}\n"; }

}  // namespace

TEST_SUITE("epochs") {

TEST_CASE("sampling grid arithmetic") {
  SamplingInfo s{500.0, -200.0, 501};
  CHECK(s.step_ms() == doctest::Approx(2.0));
  CHECK(s.time_ms(0) == doctest::Approx(-200.0));
  CHECK(s.time_ms(100) == doctest::Approx(0.0));
  CHECK(s.last_time_ms() == doctest::Approx(800.0));
}

TEST_CASE("constructor validates dimensions and duplicate keys") {
  std::vector<TrialMeta> metas{{"s1", "i1", "a", 0}, {"s1", "i2", "a", 1}};
  SamplingInfo s{500.0, 0.0, 3};
  CHECK_THROWS_AS(EpochSet(metas, {"c1"}, s, std::vector<double>(5, 0.0)),
                  std::invalid_argument);
  std::vector<TrialMeta> dup{{"s1", "i1", "a", 0}, {"s1", "i1", "a", 0}};
  CHECK_THROWS_AS(EpochSet(dup, {"c1"}, s, std::vector<double>(6, 0.0)),
                  std::invalid_argument);
  EpochSet ok(metas, {"c1"}, s, std::vector<double>(6, 1.5));
  CHECK(ok.n_trials() == 2);
  CHECK(ok.n_channels() == 1);
  CHECK(ok.n_samples() == 3);
  CHECK(ok.channel_index("c1") == 0);
  CHECK(ok.channel_index("zz") == -1);
}

TEST_CASE("value/trial_channel agree with the documented layout") {
  EpochSet e = make_coded_epochs(2, 2, 3, 4);
  // Oracle: recompute the flat index by hand from the documented layout.
  for (int t = 0; t < e.n_trials(); ++t)
    for (int c = 0; c < e.n_channels(); ++c) {
      auto span = e.trial_channel(t, c);
      for (int k = 0; k < e.n_samples(); ++k) {
        const double direct = e.data()[(static_cast<std::size_t>(t) * 3 + c) * 4 + k];
        CHECK(e.value(t, c, k) == direct);
        CHECK(span[k] == direct);
        CHECK(direct == t * 10000.0 + c * 100.0 + k * 0.25);
      }
    }
}

TEST_CASE("window_sample_indices enumerates the half-open window") {
  SamplingInfo s{500.0, -200.0, 501};  // grid -200, -198, ..., 800

  SUBCASE("350-600 ms analysis window") {
    auto idx = window_sample_indices(s, {350.0, 600.0});
    // Oracle: brute-force half-open membership over the explicit grid.
    std::vector<int> expect;
    for (int k = 0; k < s.n_samples; ++k) {
      double t = -200.0 + 2.0 * k;
      if (t >= 350.0 && t < 600.0) expect.push_back(k);
    }
    CHECK(idx == expect);
    CHECK(idx.size() == 125);
    CHECK(idx.front() == 275);
    CHECK(idx.back() == 399);
  }

  SUBCASE("baseline window [-100, 0) excludes stimulus onset") {
    auto idx = window_sample_indices(s, {-100.0, 0.0});
    CHECK(idx.size() == 50);
    CHECK(s.time_ms(idx.front()) == doctest::Approx(-100.0));
    CHECK(s.time_ms(idx.back()) == doctest::Approx(-2.0));
  }

  SUBCASE("single-sample window") {
    auto idx = window_sample_indices(s, {-200.0, -198.0});
    CHECK(idx == std::vector<int>{0});
  }

  SUBCASE("edges within tolerance snap to the grid") {
    auto idx = window_sample_indices(s, {350.0 + 5e-7, 600.0 - 5e-7});
    CHECK(idx.size() == 125);
    CHECK(idx.front() == 275);
  }

  SUBCASE("malformed or empty windows throw") {
    CHECK_THROWS_AS(window_sample_indices(s, {600.0, 350.0}), std::invalid_argument);
    CHECK_THROWS_AS(window_sample_indices(s, {350.0, 350.0}), std::invalid_argument);
    CHECK_THROWS_AS(window_sample_indices(s, {900.0, 950.0}), std::invalid_argument);
    CHECK_THROWS_AS(window_sample_indices(s, {801.0, 801.5}), std::invalid_argument);
  }
}

TEST_CASE("window_average matches a hand-rolled mean") {
  EpochSet e = make_coded_epochs(2, 3, 2, 10, 500.0, -10.0);  // grid -10..8 ms
  TimeWindow w{-4.0, 4.0};
  TrialTable t = window_average(e, w);
  CHECK(t.unit_kind == "channel");
  CHECK(t.n_rows() == static_cast<std::size_t>(e.n_trials() * e.n_channels()));

  // Oracle: accumulate over raw tensor values, resolving times independently.
  std::size_t row = 0;
  for (int tr = 0; tr < e.n_trials(); ++tr) {
    for (int c = 0; c < e.n_channels(); ++c, ++row) {
      double sum = 0.0;
      int n = 0;
      for (int k = 0; k < e.n_samples(); ++k) {
        double tm = -10.0 + 2.0 * k;
        if (tm >= -4.0 && tm < 4.0) {
          sum += e.value(tr, c, k);
          ++n;
        }
      }
      CHECK(n == 4);
      CHECK(t.value[row] == doctest::Approx(sum / n).epsilon(1e-12));
      CHECK(t.subject[row] == e.trials()[tr].subject);
      CHECK(t.item[row] == e.trials()[tr].item);
      CHECK(t.condition[row] == e.trials()[tr].condition);
      CHECK(t.trial_index[row] == e.trials()[tr].trial_index);
      CHECK(t.unit[row] == e.channels()[c]);
    }
  }

  SUBCASE("averaging is linear in the data") {
    std::vector<double> doubled(e.data());
    for (double& v : doubled) v *= 2.0;
    EpochSet e2(e.trials(), e.channels(), e.sampling(), doubled);
    TrialTable t2 = window_average(e2, w);
    for (std::size_t i = 0; i < t.n_rows(); ++i)
      CHECK(t2.value[i] == doctest::Approx(2.0 * t.value[i]));
  }
}

TEST_CASE("save/load round trip is bit-identical") {
  // Values spanning magnitudes, signs, and non-terminating binary fractions.
  std::mt19937_64 gen(make_engine(20260823, 1));
  std::vector<TrialMeta> metas;
  std::vector<double> data;
  for (int t = 0; t < 6; ++t) {
    metas.push_back({"s" + std::to_string(t % 2 + 1), "i" + std::to_string(t / 2 + 1),
                     t % 2 ? "hi" : "lo", t});
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 7; ++k) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        int mag = static_cast<int>(gen() % 25) - 12;
        data.push_back(u(gen) * std::pow(10.0, mag));
      }
  }
  EpochSet e(metas, {"Cz", "Pz"}, SamplingInfo{250.0, -16.0, 7}, data);
  RoiMap rm{{"Cz", "M"}, {"Pz", "M"}};

  fs::path p = temp_file("roundtrip.csv");
  save_epochs(e, p.string(), rm);
  LoadResult r = load_epochs(p.string());

  CHECK(r.report.n_trials_loaded == 6);
  CHECK(r.report.n_trials_dropped_nan == 0);
  CHECK(r.roi_map == rm);
  CHECK(r.epochs.n_trials() == e.n_trials());
  CHECK(r.epochs.channels() == e.channels());
  CHECK(r.epochs.sampling().rate_hz == e.sampling().rate_hz);
  CHECK(r.epochs.sampling().epoch_start_ms == e.sampling().epoch_start_ms);
  CHECK(r.epochs.sampling().n_samples == e.sampling().n_samples);

  // Loader sorts trials by (subject,item,trial); compare per trial key.
  std::map<std::tuple<std::string, std::string, int>, int> orig_slot;
  for (int t = 0; t < e.n_trials(); ++t)
    orig_slot[{metas[t].subject, metas[t].item, metas[t].trial_index}] = t;
  for (int t = 0; t < r.epochs.n_trials(); ++t) {
    const TrialMeta& m = r.epochs.trials()[t];
    const int ot = orig_slot.at({m.subject, m.item, m.trial_index});
    CHECK(m.condition == metas[ot].condition);
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 7; ++k) {
        // Bit identity, not approximate equality.
        CHECK(r.epochs.value(t, c, k) == e.value(ot, c, k));
      }
  }
}

TEST_CASE("loader rejects malformed inputs") {
  SUBCASE("bad header") {
    fs::path p = temp_file("badheader.csv");
    write_text(p, "subject,item,cond,trial,channel,time_ms,uv\n");
    write_text(temp_file("badheader.meta.json"), basic_sidecar());
    CHECK_THROWS_WITH_AS(load_epochs(p.string()),
                         doctest::Contains("bad header"), std::runtime_error);
  }

  SUBCASE("ragged trial: one missing cell") {
    fs::path p = temp_file("ragged.csv");
    write_text(p,
               "subj,item,condition,trial,channel,time_ms,uv\n"
               "s1,i1,a,0,c1,0,1.0\n"
               "s1,i1,a,0,c1,2,1.5\n"
               "s1,i2,a,1,c1,0,2.0\n");  // missing time 2 for trial (s1,i2,1)
    write_text(temp_file("ragged.meta.json"), basic_sidecar());
    CHECK_THROWS_WITH_AS(load_epochs(p.string()), doctest::Contains("ragged"),
                         std::runtime_error);
  }

  SUBCASE("duplicate cell") {
    fs::path p = temp_file("dupcell.csv");
    write_text(p,
               "subj,item,condition,trial,channel,time_ms,uv\n"
               "s1,i1,a,0,c1,0,1.0\n"
               "s1,i1,a,0,c1,0,1.0\n");
    write_text(temp_file("dupcell.meta.json"), basic_sidecar());
    CHECK_THROWS_WITH_AS(load_epochs(p.string()), doctest::Contains("duplicate cell"),
                         std::runtime_error);
  }

  SUBCASE("conflicting condition within a trial") {
    fs::path p = temp_file("condconflict.csv");
    write_text(p,
               "subj,item,condition,trial,channel,time_ms,uv\n"
               "s1,i1,a,0,c1,0,1.0\n"
               "s1,i1,b,0,c1,2,1.0\n");
    write_text(temp_file("condconflict.meta.json"), basic_sidecar());
    CHECK_THROWS_WITH_AS(load_epochs(p.string()),
                         doctest::Contains("conflicting conditions"),
                         std::runtime_error);
  }

  SUBCASE("grid spacing inconsistent with sidecar rate") {
    fs::path p = temp_file("badrate.csv");
    write_text(p,
               "subj,item,condition,trial,channel,time_ms,uv\n"
               "s1,i1,a,0,c1,0,1.0\n"
               "s1,i1,a,0,c1,2,1.0\n");
    write_text(temp_file("badrate.meta.json"), "{\"rate_hz\": 250.0}\n");
    CHECK_THROWS_WITH_AS(load_epochs(p.string()),
                         doctest::Contains("inconsistent with rate_hz"),
                         std::runtime_error);
  }

  SUBCASE("missing sidecar") {
    fs::path p = temp_file("nosidecar.csv");
    write_text(p,
               "subj,item,condition,trial,channel,time_ms,uv\n"
               "s1,i1,a,0,c1,0,1.0\n");
    fs::remove(temp_file("nosidecar.meta.json"));
    CHECK_THROWS_WITH_AS(load_epochs(p.string()), doctest::Contains("sidecar"),
                         std::runtime_error);
  }

  SUBCASE("roi_map naming an unknown channel") {
    fs::path p = temp_file("badroi.csv");
    write_text(p,
               "subj,item,condition,trial,channel,time_ms,uv\n"
               "s1,i1,a,0,c1,0,1.0\n");
    write_text(temp_file("badroi.meta.json"),
               "{\"rate_hz\": 500.0, \"roi_map\": {\"c9\": \"M\"}}\n");
    CHECK_THROWS_WITH_AS(load_epochs(p.string()), doctest::Contains("c9"),
                         std::runtime_error);
  }
}

TEST_CASE("NaN-bearing trials are dropped and counted") {
  fs::path p = temp_file("nantrial.csv");
  write_text(p,
             "subj,item,condition,trial,channel,time_ms,uv\n"
             "s1,i1,a,0,c1,0,1.0\n"
             "s1,i1,a,0,c1,2,nan\n"
             "s1,i2,b,1,c1,0,3.0\n"
             "s1,i2,b,1,c1,2,4.0\n");
  write_text(temp_file("nantrial.meta.json"), basic_sidecar());
  LoadResult r = load_epochs(p.string());
  CHECK(r.report.n_trials_loaded == 1);
  CHECK(r.report.n_trials_dropped_nan == 1);
  REQUIRE(r.epochs.n_trials() == 1);
  CHECK(r.epochs.trials()[0].item == "i2");
  CHECK(r.epochs.value(0, 0, 0) == 3.0);
  for (double v : r.epochs.data()) CHECK(!std::isnan(v));
}

TEST_CASE("artifact rejection matches a brute-force scan") {
  EpochSet e = make_coded_epochs(2, 4, 2, 5);
  // Plant controlled extremes: trial 2 gets +120, trial 5 gets -80.5.
  std::vector<double> data(e.data());
  auto at = [&](int t, int c, int k) -> double& {
    return data[(static_cast<std::size_t>(t) * 2 + c) * 5 + k];
  };
  for (auto& v : data) v = std::fmod(v, 50.0);  // keep the background small
  at(2, 1, 3) = 120.0;
  at(5, 0, 0) = -80.5;
  EpochSet planted(e.trials(), e.channels(), e.sampling(), data);

  const double thr = 75.0;
  auto [kept, report] = reject_artifacts(planted, thr);

  // Oracle: independent max-abs scan over the raw tensor.
  std::set<int> expect_dropped;
  for (int t = 0; t < planted.n_trials(); ++t) {
    double mx = 0.0;
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 5; ++k) mx = std::max(mx, std::abs(at(t, c, k)));
    if (mx > thr) expect_dropped.insert(t);
  }
  CHECK(expect_dropped == std::set<int>{2, 5});
  CHECK(report.dropped.size() == 2);
  CHECK(report.n_kept == planted.n_trials() - 2);
  CHECK(kept.n_trials() == report.n_kept);
  CHECK(report.threshold_uv == thr);
  CHECK(report.dropped[0].max_abs_uv == doctest::Approx(120.0));
  CHECK(report.dropped[1].max_abs_uv == doctest::Approx(80.5));

  // Survivors keep their data contiguous and untouched.
  int out_t = 0;
  for (int t = 0; t < planted.n_trials(); ++t) {
    if (expect_dropped.count(t)) continue;
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 5; ++k) CHECK(kept.value(out_t, c, k) == at(t, c, k));
    ++out_t;
  }

  SUBCASE("per-condition tallies") {
    int a = 0, b = 0;
    for (int t : expect_dropped)
      (planted.trials()[t].condition == "a" ? a : b) += 1;
    CHECK(report.dropped_per_condition.at("a") == a);
    CHECK(report.dropped_per_condition.at("b") == b);
  }

  SUBCASE("value exactly at the threshold survives") {
    at(2, 1, 3) = thr;
    at(5, 0, 0) = -thr;
    EpochSet edge(e.trials(), e.channels(), e.sampling(), data);
    auto [kept2, rep2] = reject_artifacts(edge, thr);
    CHECK(rep2.dropped.empty());
    CHECK(kept2.n_trials() == planted.n_trials());
  }

  SUBCASE("rejecting everything throws") {
    CHECK_THROWS_AS(reject_artifacts(planted, 1e-9), std::runtime_error);
  }

  SUBCASE("report CSV lists dropped trials") {
    fs::path p = temp_file("rejects.csv");
    report.write_csv(p.string());
    std::ifstream in(p);
    std::string header, l1, l2;
    std::getline(in, header);
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(header == "subj,item,trial,max_abs_uv");
    CHECK(l1.find("120") != std::string::npos);
    CHECK(l2.find("80.5") != std::string::npos);
  }
}

TEST_CASE("roi_average collapses channels with a group-by oracle") {
  TrialTable t;
  t.unit_kind = "channel";
  auto push = [&](const std::string& s, const std::string& i, const std::string& cond,
                  int tr, const std::string& u, double v) {
    t.subject.push_back(s);
    t.item.push_back(i);
    t.condition.push_back(cond);
    t.trial_index.push_back(tr);
    t.unit.push_back(u);
    t.value.push_back(v);
  };
  // Trial 0: four channels; trial 1: same channels, other condition.
  push("s1", "i1", "a", 0, "F3", 1.0);
  push("s1", "i1", "a", 0, "F4", 3.0);
  push("s1", "i1", "a", 0, "P3", 10.0);
  push("s1", "i1", "a", 0, "Oz", -7.0);  // unmapped -> dropped
  push("s1", "i2", "b", 1, "F3", 2.0);
  push("s1", "i2", "b", 1, "F4", 4.0);
  push("s1", "i2", "b", 1, "P3", 20.0);

  RoiMap m{{"F3", "LA"}, {"F4", "RA"}, {"P3", "LP"}};
  TrialTable r = roi_average(t, m);
  CHECK(r.unit_kind == "roi");
  REQUIRE(r.n_rows() == 6);

  std::map<std::pair<int, std::string>, double> got;
  for (std::size_t i = 0; i < r.n_rows(); ++i)
    got[{r.trial_index[i], r.unit[i]}] = r.value[i];
  CHECK(got.at({0, "LA"}) == doctest::Approx(1.0));
  CHECK(got.at({0, "RA"}) == doctest::Approx(3.0));
  CHECK(got.at({0, "LP"}) == doctest::Approx(10.0));
  CHECK(got.at({1, "LA"}) == doctest::Approx(2.0));
  CHECK(got.count({0, "Oz"}) == 0);

  SUBCASE("multi-channel ROI takes the mean") {
    RoiMap wide{{"F3", "F"}, {"F4", "F"}};
    TrialTable r2 = roi_average(t, wide);
    std::map<int, double> by_trial;
    for (std::size_t i = 0; i < r2.n_rows(); ++i) by_trial[r2.trial_index[i]] = r2.value[i];
    CHECK(by_trial.at(0) == doctest::Approx((1.0 + 3.0) / 2.0));
    CHECK(by_trial.at(1) == doctest::Approx((2.0 + 4.0) / 2.0));
  }

  SUBCASE("ROI with no present channel throws with its name") {
    RoiMap bad{{"F3", "LA"}, {"C9", "ghost"}};
    CHECK_THROWS_WITH_AS(roi_average(t, bad), doctest::Contains("ghost"),
                         std::runtime_error);
  }

  SUBCASE("roi tables cannot be re-collapsed") {
    CHECK_THROWS_AS(roi_average(r, m), std::invalid_argument);
  }
}

TEST_CASE("grand average weights subjects equally, not trials") {
  // s1 has 3 trials of condition a, s2 has 1; pooling over trials would give
  // a different answer than the two-stage mean, and the test tells them apart.
  std::vector<TrialMeta> metas{{"s1", "i1", "a", 0},
                               {"s1", "i2", "a", 1},
                               {"s1", "i3", "a", 2},
                               {"s2", "i1", "a", 3},
                               {"s2", "i2", "b", 4}};
  std::vector<double> vals{1.0, 2.0, 6.0, 10.0, 42.0};  // one channel, one sample
  std::vector<double> data;
  for (double v : vals) data.push_back(v);
  EpochSet e(metas, {"c1"}, SamplingInfo{500.0, 0.0, 1}, data);

  GrandAverage g = grand_average(e);
  REQUIRE(g.conditions == std::vector<std::string>{"a", "b"});
  const int ia = g.condition_index("a");
  const int ib = g.condition_index("b");
  REQUIRE(ia == 0);
  REQUIRE(ib == 1);

  // Subject means: s1 -> (1+2+6)/3 = 3, s2 -> 10. Two-stage: (3+10)/2 = 6.5.
  // Trial-pooled would be (1+2+6+10)/4 = 4.75; assert we did not compute that.
  CHECK(g.subject_means[ia].at("s1")(0, 0) == doctest::Approx(3.0));
  CHECK(g.subject_means[ia].at("s2")(0, 0) == doctest::Approx(10.0));
  CHECK(g.grand[ia](0, 0) == doctest::Approx(6.5));
  CHECK(g.grand[ia](0, 0) != doctest::Approx(4.75));

  // Condition b exists only for s2; s1 is excluded with a warning.
  CHECK(g.grand[ib](0, 0) == doctest::Approx(42.0));
  CHECK(g.subject_means[ib].count("s1") == 0);
  REQUIRE(g.warnings.size() == 1);
  CHECK(g.warnings[0].find("s1") != std::string::npos);
  CHECK(g.warnings[0].find("'b'") != std::string::npos);

  CHECK(g.condition_index("zz") == -1);
}

}  // TEST_SUITE
