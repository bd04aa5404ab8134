// erpreg: regression-based baseline correction for event-related potentials.
//
// Subcommands cover the full pipeline: synthetic data generation, window-mean
// model fits under the different baseline-handling strategies, pointwise
// (mass-univariate) fits, bootstrap bands, baseline-voltage correlation
// curves, power analysis, Bayesian posteriors, and nested-model comparison.
// Every run writes `run.json` into its output directory; `erpreg rerun
// <run.json>` re-executes it and reproduces the outputs byte-identically.
//
// Exit codes: 0 success, 1 runtime/convergence failure, 2 configuration error.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "erpreg/baseline.hpp"
#include "erpreg/bayes.hpp"
#include "erpreg/design.hpp"
#include "erpreg/epochs.hpp"
#include "erpreg/inference.hpp"
#include "erpreg/lmm.hpp"
#include "erpreg/ols.hpp"
#include "erpreg/power.hpp"
#include "erpreg/rng.hpp"
#include "erpreg/stats.hpp"
#include "erpreg/synth.hpp"
#include "erpreg/types.hpp"

namespace {

using erpreg::TimeWindow;
using nlohmann::json;

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(part);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse " + what + " '" + s + "'");
  }
}

// Every option of every subcommand, flattened. Doubles default to NaN
// (= not set) and are replaced by their resolved values before the manifest
// is written, so `rerun` sees a fully pinned configuration.
struct RunConfig {
  std::string subcommand;
  std::string out = "erpreg-out";

  // Inputs.
  std::string input;  // epochs CSV (or the manifest path for `rerun`)
  bool use_rois = false;

  // Synthetic-data configuration (simulate / power / bayes).
  std::string preset;
  int subjects = -1;
  int items = -1;
  int trials_per_cell = -1;
  std::string conditions;  // comma-separated level names
  double effect = kUnset;
  double sigma = kUnset;
  double sigma_baseline = kUnset;
  double mu_baseline = kUnset;
  double coupling = kUnset;
  double drift_rate = kUnset;
  double sd_subject = kUnset;
  double sd_item = kUnset;
  double within_noise = kUnset;

  // Time windows: a preset name (pre100, pre200, pre500, post200, whole) or
  // an explicit "start,end" pair in ms.
  std::string baseline_window;
  std::string analysis_window;

  // Models.
  std::string formula;
  std::string random_terms;
  std::string strategy = "regression";
  std::string nested_formula;
  std::string nested_random;

  // Bands and rendering.
  std::string difference;  // "condA,condB" switches bands to difference mode
  std::string correction = "none";
  std::string channel;
  std::string svg;  // file name inside the output directory; empty = off
  double level = 0.95;
  int n_boot = 2000;

  // Power.
  std::string term;
  std::string test = "lrt";
  int n_sim = 1000;
  std::string strategies = "none,traditional,regression";

  // Bayes.
  std::vector<std::string> priors;  // name=normal(loc,scale) | name=t(df,loc,scale) | name=tvar(df,loc,variance)
  double residual_df = 3.0;
  double residual_scale = 10.0;
  int chains = 4;
  int warmup = 1000;
  int iters = 5000;
  std::uint64_t table_seed = 0;

  // Execution.
  std::uint64_t seed = 0;
  int threads = 0;
};

void to_json(json& j, const RunConfig& c) {
  j = json{{"subcommand", c.subcommand},
           {"out", c.out},
           {"input", c.input},
           {"use_rois", c.use_rois},
           {"preset", c.preset},
           {"subjects", c.subjects},
           {"items", c.items},
           {"trials_per_cell", c.trials_per_cell},
           {"conditions", c.conditions},
           {"effect", c.effect},
           {"sigma", c.sigma},
           {"sigma_baseline", c.sigma_baseline},
           {"mu_baseline", c.mu_baseline},
           {"coupling", c.coupling},
           {"drift_rate", c.drift_rate},
           {"sd_subject", c.sd_subject},
           {"sd_item", c.sd_item},
           {"within_noise", c.within_noise},
           {"baseline_window", c.baseline_window},
           {"analysis_window", c.analysis_window},
           {"formula", c.formula},
           {"random_terms", c.random_terms},
           {"strategy", c.strategy},
           {"nested_formula", c.nested_formula},
           {"nested_random", c.nested_random},
           {"difference", c.difference},
           {"correction", c.correction},
           {"channel", c.channel},
           {"svg", c.svg},
           {"level", c.level},
           {"n_boot", c.n_boot},
           {"term", c.term},
           {"test", c.test},
           {"n_sim", c.n_sim},
           {"strategies", c.strategies},
           {"priors", c.priors},
           {"residual_df", c.residual_df},
           {"residual_scale", c.residual_scale},
           {"chains", c.chains},
           {"warmup", c.warmup},
           {"iters", c.iters},
           {"table_seed", c.table_seed},
           {"seed", c.seed},
           {"threads", c.threads}};
}

double json_double(const json& j, const std::string& key) {
  const auto& v = j.at(key);
  return v.is_null() ? kUnset : v.get<double>();  // NaN serializes as null
}

void from_json(const json& j, RunConfig& c) {
  j.at("subcommand").get_to(c.subcommand);
  j.at("out").get_to(c.out);
  j.at("input").get_to(c.input);
  j.at("use_rois").get_to(c.use_rois);
  j.at("preset").get_to(c.preset);
  j.at("subjects").get_to(c.subjects);
  j.at("items").get_to(c.items);
  j.at("trials_per_cell").get_to(c.trials_per_cell);
  j.at("conditions").get_to(c.conditions);
  c.effect = json_double(j, "effect");
  c.sigma = json_double(j, "sigma");
  c.sigma_baseline = json_double(j, "sigma_baseline");
  c.mu_baseline = json_double(j, "mu_baseline");
  c.coupling = json_double(j, "coupling");
  c.drift_rate = json_double(j, "drift_rate");
  c.sd_subject = json_double(j, "sd_subject");
  c.sd_item = json_double(j, "sd_item");
  c.within_noise = json_double(j, "within_noise");
  j.at("baseline_window").get_to(c.baseline_window);
  j.at("analysis_window").get_to(c.analysis_window);
  j.at("formula").get_to(c.formula);
  j.at("random_terms").get_to(c.random_terms);
  j.at("strategy").get_to(c.strategy);
  j.at("nested_formula").get_to(c.nested_formula);
  j.at("nested_random").get_to(c.nested_random);
  j.at("difference").get_to(c.difference);
  j.at("correction").get_to(c.correction);
  j.at("channel").get_to(c.channel);
  j.at("svg").get_to(c.svg);
  j.at("level").get_to(c.level);
  j.at("n_boot").get_to(c.n_boot);
  j.at("term").get_to(c.term);
  j.at("test").get_to(c.test);
  j.at("n_sim").get_to(c.n_sim);
  j.at("strategies").get_to(c.strategies);
  j.at("priors").get_to(c.priors);
  j.at("residual_df").get_to(c.residual_df);
  j.at("residual_scale").get_to(c.residual_scale);
  j.at("chains").get_to(c.chains);
  j.at("warmup").get_to(c.warmup);
  j.at("iters").get_to(c.iters);
  j.at("table_seed").get_to(c.table_seed);
  j.at("seed").get_to(c.seed);
  j.at("threads").get_to(c.threads);
}

std::string out_path(const RunConfig& rc, const std::string& file) {
  return (std::filesystem::path(rc.out) / file).string();
}

void write_manifest(const RunConfig& rc) {
  std::filesystem::create_directories(rc.out);
  const std::string path = out_path(rc, "run.json");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << json(rc).dump(2) << '\n';
}

TimeWindow resolve_window(const std::string& s, const erpreg::SamplingInfo& samp) {
  if (s.find(',') == std::string::npos) return erpreg::window_preset(s, samp);
  const auto parts = split(s, ',');
  if (parts.size() != 2)
    throw std::invalid_argument("cannot parse window '" + s +
                                "' (want 'start,end' in ms or a preset name)");
  return {parse_double(parts[0], "window edge"),
          parse_double(parts[1], "window edge")};
}

std::string window_string(const TimeWindow& w) {
  return fmt(w.start_ms) + "," + fmt(w.end_ms);
}

// Builds the synthetic-data configuration from preset + explicit overrides,
// then writes every resolved value back into rc so the manifest pins it.
erpreg::SynthConfig resolve_synth(RunConfig& rc) {
  erpreg::SynthConfig c =
      rc.preset.empty() ? erpreg::SynthConfig{} : erpreg::preset_config(rc.preset);
  if (rc.subjects >= 0) c.n_subjects = rc.subjects;
  if (rc.items >= 0) c.n_items = rc.items;
  if (rc.trials_per_cell >= 0) c.n_trials_per_cell = rc.trials_per_cell;
  if (!rc.conditions.empty()) c.conditions = split(rc.conditions, ',');
  if (!std::isnan(rc.effect)) c.true_effect_uv = rc.effect;
  if (!std::isnan(rc.sigma)) c.sigma = rc.sigma;
  if (!std::isnan(rc.sigma_baseline)) c.sigma_baseline = rc.sigma_baseline;
  if (!std::isnan(rc.mu_baseline)) c.mu_baseline = rc.mu_baseline;
  if (!std::isnan(rc.coupling)) c.drift_coupling = rc.coupling;
  if (!std::isnan(rc.drift_rate)) c.drift_rate_uv_per_s = rc.drift_rate;
  if (!std::isnan(rc.sd_subject)) c.random_sd_subject = rc.sd_subject;
  if (!std::isnan(rc.sd_item)) c.random_sd_item = rc.sd_item;
  if (!std::isnan(rc.within_noise)) c.within_noise_sd = rc.within_noise;
  if (!rc.baseline_window.empty())
    c.baseline_window = resolve_window(rc.baseline_window, c.sampling);
  if (!rc.analysis_window.empty())
    c.analysis_window = resolve_window(rc.analysis_window, c.sampling);
  c.validate();

  rc.subjects = c.n_subjects;
  rc.items = c.n_items;
  rc.trials_per_cell = c.n_trials_per_cell;
  std::string conds;
  for (const auto& cond : c.conditions) {
    if (!conds.empty()) conds += ',';
    conds += cond;
  }
  rc.conditions = conds;
  rc.effect = c.true_effect_uv;
  rc.sigma = c.sigma;
  rc.sigma_baseline = c.sigma_baseline;
  rc.mu_baseline = c.mu_baseline;
  rc.coupling = c.drift_coupling;
  rc.drift_rate = c.drift_rate_uv_per_s;
  rc.sd_subject = c.random_sd_subject;
  rc.sd_item = c.random_sd_item;
  rc.within_noise = c.within_noise_sd;
  rc.baseline_window = window_string(c.baseline_window);
  rc.analysis_window = window_string(c.analysis_window);
  return c;
}

// ---------------------------------------------------------------------------
// Baseline-handling strategies as formula/response transformations.

const std::set<std::string> kFactorNames = {"condition", "subject", "item",
                                            "roi", "channel"};

bool involves_baseline(const std::vector<std::string>& term) {
  return std::find(term.begin(), term.end(), "baseline") != term.end();
}

bool has_term(const erpreg::ModelSpec& spec, std::vector<std::string> term) {
  std::sort(term.begin(), term.end());
  for (auto t : spec.terms) {
    std::sort(t.begin(), t.end());
    if (t == term) return true;
  }
  return false;
}

void ensure_baseline_main_effect(erpreg::ModelSpec& spec) {
  if (!has_term(spec, {"baseline"}))
    spec.terms.insert(spec.terms.begin(), {"baseline"});
}

bool factor_only_term(const std::vector<std::string>& term) {
  return std::all_of(term.begin(), term.end(), [](const std::string& n) {
    return kFactorNames.count(n) > 0;
  });
}

// Applies the named strategy to the model and (for "traditional") the
// response. Returns a human-readable note for the summary files.
std::string apply_strategy(erpreg::ModelSpec& spec, erpreg::TrialTable& t,
                           const std::string& strategy) {
  if (strategy == "none") {
    for (const auto& term : spec.terms)
      if (involves_baseline(term))
        throw std::invalid_argument(
            "strategy 'none' does not allow 'baseline' in the formula");
    return "no baseline correction";
  }
  if (strategy == "traditional") {
    for (const auto& term : spec.terms)
      if (involves_baseline(term) && term.size() > 1)
        throw std::invalid_argument(
            "strategy 'traditional' pins only the baseline main effect; "
            "remove baseline interaction terms");
    std::erase_if(spec.terms, involves_baseline);
    const auto it = t.covariates.find("baseline");
    if (it == t.covariates.end())
      throw std::invalid_argument("strategy 'traditional' needs a 'baseline' covariate");
    for (std::size_t i = 0; i < t.value.size(); ++i) t.value[i] -= it->second[i];
    return "baseline coefficient pinned to 1: baseline subtracted from the "
           "response and removed from the design";
  }
  if (strategy == "regression") {
    ensure_baseline_main_effect(spec);
    return "baseline entered as a free regression covariate";
  }
  if (strategy == "regression-pairwise") {
    ensure_baseline_main_effect(spec);
    const auto terms = spec.terms;  // iterate a copy while appending
    for (const auto& term : terms)
      if (term.size() == 1 && !involves_baseline(term) && factor_only_term(term)) {
        std::vector<std::string> inter = {"baseline", term[0]};
        if (!has_term(spec, inter)) spec.terms.push_back(inter);
      }
    return "baseline covariate plus pairwise baseline-by-factor interactions";
  }
  if (strategy == "regression-full") {
    ensure_baseline_main_effect(spec);
    const auto terms = spec.terms;
    for (const auto& term : terms) {
      if (term.empty() || involves_baseline(term) || !factor_only_term(term))
        continue;
      std::vector<std::string> inter = {"baseline"};
      inter.insert(inter.end(), term.begin(), term.end());
      if (!has_term(spec, inter)) spec.terms.push_back(inter);
    }
    return "baseline crossed with every factor term";
  }
  throw std::invalid_argument(
      "unknown strategy '" + strategy +
      "' (want none, traditional, regression, regression-pairwise, or "
      "regression-full)");
}

// ---------------------------------------------------------------------------
// Report writers shared by `fit` and `compare`.

void write_coef_csv(const std::vector<std::string>& names,
                    const Eigen::VectorXd& beta, const Eigen::VectorXd& se,
                    const Eigen::VectorXd& tval, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "term,estimate,se,t\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    out << names[j] << ',' << fmt(beta[i]) << ',' << fmt(se[i]) << ','
        << fmt(tval[i]) << '\n';
  }
}

std::string glm_summary_text(const erpreg::FittedGLM& m, const std::string& formula,
                             const std::string& strategy, const std::string& note) {
  std::ostringstream os;
  char buf[256];
  os << "Linear model fit by ordinary least squares\n";
  os << "Formula: " << formula << "\n";
  os << "Strategy: " << strategy << " (" << note << ")\n\n";
  std::snprintf(buf, sizeof(buf),
                "%10s%10s%10s%10s%10s\n%10.1f%10.1f%10.1f%10.1f%10d\n\n", "AIC",
                "BIC", "logLik", "deviance", "df.resid", m.aic, m.bic, m.loglik,
                -2.0 * m.loglik, m.n_obs - m.p);
  os << buf;
  std::snprintf(buf, sizeof(buf), "Residual SD (ML): %.5f\n",
                std::sqrt(m.rss / m.n_obs));
  os << buf;
  os << "Number of obs: " << m.n_obs << "\n\nFixed effects:\n";
  std::size_t w = 0;
  for (const auto& n : m.names) w = std::max(w, n.size());
  std::snprintf(buf, sizeof(buf), "%-*s %12s %12s %9s\n", static_cast<int>(w),
                "", "Estimate", "Std. Error", "t value");
  os << buf;
  for (std::size_t j = 0; j < m.names.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    std::snprintf(buf, sizeof(buf), "%-*s %12.5f %12.5f %9.2f\n",
                  static_cast<int>(w), m.names[j].c_str(), m.beta[i], m.se[i],
                  m.tval[i]);
    os << buf;
  }
  return os.str();
}

json glm_summary_json(const erpreg::FittedGLM& m, const std::string& formula,
                      const std::string& strategy, const std::string& note) {
  json coefs = json::array();
  for (std::size_t j = 0; j < m.names.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    coefs.push_back({{"term", m.names[j]},
                     {"estimate", m.beta[i]},
                     {"se", m.se[i]},
                     {"t", m.tval[i]}});
  }
  return json{{"model",
               {{"type", "ols"},
                {"formula", formula},
                {"strategy", strategy},
                {"note", note}}},
              {"n_obs", m.n_obs},
              {"p", m.p},
              {"rss", m.rss},
              {"sigma2", m.sigma2},
              {"loglik", m.loglik},
              {"aic", m.aic},
              {"bic", m.bic},
              {"variance_floored", m.variance_floored},
              {"coefficients", coefs}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------
// Minimal SVG line-plot renderer for band curves / difference waves.

struct SvgSeries {
  std::string label;
  Eigen::VectorXd mean, lo, hi;
};

const char* kPalette[] = {"#1b6ca8", "#c8401f", "#2e7d32",
                          "#7b1fa2", "#c77700", "#37474f"};

void write_band_svg(const std::string& path, const std::string& title,
                    const erpreg::SamplingInfo& samp,
                    const std::vector<SvgSeries>& series) {
  const double width = 800, height = 420;
  const double ml = 64, mr = 16, mt = 30, mb = 42;
  const double pw = width - ml - mr, ph = height - mt - mb;

  const double t0 = samp.epoch_start_ms, t1 = samp.last_time_ms();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (Eigen::Index i = 0; i < s.mean.size(); ++i) {
      for (const double v : {s.mean[i], s.lo[i], s.hi[i]})
        if (std::isfinite(v)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
    }
  if (!(lo < hi)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const auto x = [&](double t) { return ml + (t - t0) / (t1 - t0) * pw; };
  const auto y = [&](double v) { return mt + (hi - v) / (hi - lo) * ph; };
  const auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << ml << "\" y=\"20\" font-family=\"sans-serif\" "
     << "font-size=\"14\">" << title << "</text>\n";

  // Axes with 5 labelled ticks each.
  os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double tv = t0 + k * (t1 - t0) / 4.0;
    const double vv = lo + k * (hi - lo) / 4.0;
    os << "<line x1=\"" << num(x(tv)) << "\" y1=\"" << num(mt) << "\" x2=\""
       << num(x(tv)) << "\" y2=\"" << num(mt + ph)
       << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << num(ml) << "\" y1=\"" << num(y(vv)) << "\" x2=\""
       << num(ml + pw) << "\" y2=\"" << num(y(vv))
       << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    char lab[32];
    std::snprintf(lab, sizeof(lab), "%g", tv);
    os << "<text x=\"" << num(x(tv)) << "\" y=\"" << num(height - 24)
       << "\" text-anchor=\"middle\">" << lab << "</text>\n";
    std::snprintf(lab, sizeof(lab), "%.3g", vv);
    os << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(y(vv) + 4)
       << "\" text-anchor=\"end\">" << lab << "</text>\n";
  }
  os << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(height - 8)
     << "\" text-anchor=\"middle\">time (ms)</text>\n";
  os << "</g>\n";
  if (lo < 0.0 && hi > 0.0)
    os << "<line x1=\"" << num(ml) << "\" y1=\"" << num(y(0.0)) << "\" x2=\""
       << num(ml + pw) << "\" y2=\"" << num(y(0.0))
       << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(*kPalette))];
    // Band: forward along the lower edge, back along the upper edge.
    std::ostringstream band;
    bool first = true;
    for (int i = 0; i < samp.n_samples; ++i) {
      if (!std::isfinite(s.lo[i])) continue;
      band << (first ? "M" : "L") << num(x(samp.time_ms(i))) << ","
           << num(y(s.lo[i])) << ' ';
      first = false;
    }
    for (int i = samp.n_samples - 1; i >= 0; --i) {
      if (!std::isfinite(s.hi[i])) continue;
      band << "L" << num(x(samp.time_ms(i))) << "," << num(y(s.hi[i])) << ' ';
    }
    if (!first)
      os << "<path d=\"" << band.str() << "Z\" fill=\"" << color
         << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (int i = 0; i < samp.n_samples; ++i)
      if (std::isfinite(s.mean[i]))
        os << num(x(samp.time_ms(i))) << "," << num(y(s.mean[i])) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << num(ml + pw - 8) << "\" y=\""
       << num(mt + 16 + 16 * static_cast<double>(si))
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" "
       << "fill=\"" << color << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  write_text(path, os.str());
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces.

struct LoadedTable {
  erpreg::LoadResult loaded;
  erpreg::TrialTable table;
  TimeWindow baseline_window;
  TimeWindow analysis_window;
};

LoadedTable load_table(RunConfig& rc) {
  LoadedTable lt;
  lt.loaded = erpreg::load_epochs(rc.input);
  const auto& samp = lt.loaded.epochs.sampling();
  if (rc.baseline_window.empty()) rc.baseline_window = "pre100";
  if (rc.analysis_window.empty()) rc.analysis_window = "350,600";
  lt.baseline_window = resolve_window(rc.baseline_window, samp);
  lt.analysis_window = resolve_window(rc.analysis_window, samp);
  rc.baseline_window = window_string(lt.baseline_window);
  rc.analysis_window = window_string(lt.analysis_window);
  const erpreg::RoiMap* rois = nullptr;
  if (rc.use_rois) {
    if (lt.loaded.roi_map.empty())
      throw std::invalid_argument("--rois given but the sidecar has no roi_map");
    rois = &lt.loaded.roi_map;
  }
  lt.table = erpreg::make_analysis_table(lt.loaded.epochs, lt.analysis_window,
                                         lt.baseline_window, rois);
  return lt;
}

std::pair<std::string, erpreg::Prior> parse_prior(const std::string& s) {
  const auto eq = s.find('=');
  const auto lpar = s.find('(');
  const auto bad = [&]() {
    return std::invalid_argument(
        "cannot parse prior '" + s +
        "' (want name=normal(loc,scale), name=t(df,loc,scale), or "
        "name=tvar(df,loc,variance))");
  };
  if (eq == std::string::npos || lpar == std::string::npos || lpar < eq ||
      s.back() != ')')
    throw bad();
  const std::string name = s.substr(0, eq);
  const std::string kind = s.substr(eq + 1, lpar - eq - 1);
  const auto args_s = split(s.substr(lpar + 1, s.size() - lpar - 2), ',');
  std::vector<double> a;
  for (const auto& part : args_s) a.push_back(parse_double(part, "prior argument"));
  if (name.empty()) throw bad();
  if (kind == "normal" && a.size() == 2)
    return {name, erpreg::normal_prior(a[0], a[1])};
  if (kind == "t" && a.size() == 3)
    return {name, erpreg::student_t_prior(a[0], a[1], a[2])};
  if (kind == "tvar" && a.size() == 3)
    return {name, erpreg::student_t_prior_with_variance(a[0], a[1], a[2])};
  throw bad();
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_simulate(RunConfig& rc) {
  const erpreg::SynthConfig c = resolve_synth(rc);
  write_manifest(rc);
  const erpreg::SynthEpochs se = erpreg::generate(c, rc.seed);
  erpreg::save_epochs(se.epochs, out_path(rc, "epochs.csv"));
  erpreg::write_truth_json(c, se.truth, out_path(rc, "truth.json"));
  return 0;
}

int cmd_fit(RunConfig& rc) {
  LoadedTable lt = load_table(rc);
  if (rc.formula.empty()) rc.formula = "uv ~ condition";
  erpreg::ModelSpec spec = erpreg::parse_formula(rc.formula);
  const std::string note = apply_strategy(spec, lt.table, rc.strategy);
  rc.formula = erpreg::format_formula(spec);
  write_manifest(rc);

  if (rc.random_terms.empty()) {
    const erpreg::FittedGLM m = erpreg::fit_ols(lt.table, spec);
    write_text(out_path(rc, "summary.txt"),
               glm_summary_text(m, rc.formula, rc.strategy, note));
    std::ofstream js(out_path(rc, "summary.json"));
    js << glm_summary_json(m, rc.formula, rc.strategy, note).dump(2) << '\n';
    write_coef_csv(m.names, m.beta, m.se, m.tval, out_path(rc, "coefficients.csv"));
  } else {
    const erpreg::FittedLMM m =
        erpreg::fit_lmm(lt.table, spec, erpreg::parse_random(rc.random_terms));
    write_text(out_path(rc, "summary.txt"),
               erpreg::summary_text(m) + "\nStrategy: " + rc.strategy + " (" +
                   note + ")\n");
    erpreg::write_fit_json(m, out_path(rc, "summary.json"));
    write_coef_csv(m.names, m.beta, m.se, m.tval, out_path(rc, "coefficients.csv"));
  }
  return 0;
}

int cmd_pointwise(RunConfig& rc) {
  erpreg::LoadResult lr = erpreg::load_epochs(rc.input);
  if (rc.baseline_window.empty()) rc.baseline_window = "pre100";
  const TimeWindow bw = resolve_window(rc.baseline_window, lr.epochs.sampling());
  rc.baseline_window = window_string(bw);
  if (rc.formula.empty()) rc.formula = "uv ~ baseline + condition";
  const erpreg::ModelSpec spec = erpreg::parse_formula(rc.formula);
  write_manifest(rc);
  const erpreg::PointwiseResult r =
      erpreg::pointwise_fit(lr.epochs, spec, bw, rc.threads);
  erpreg::write_pointwise_csv(r, out_path(rc, "pointwise.csv"));
  return 0;
}

erpreg::EpochSet correct_epochs(const erpreg::EpochSet& e,
                                const std::string& correction,
                                const TimeWindow& bw, int threads) {
  if (correction == "none") return e;
  if (correction == "traditional") return erpreg::apply_traditional(e, bw);
  if (correction == "regression")
    return erpreg::apply_regression(
        e, erpreg::parse_formula("uv ~ baseline + condition"), bw, threads);
  throw std::invalid_argument("unknown correction '" + correction +
                              "' (want none, traditional, or regression)");
}

int cmd_bands(RunConfig& rc) {
  erpreg::LoadResult lr = erpreg::load_epochs(rc.input);
  const auto& samp_in = lr.epochs.sampling();
  if (rc.baseline_window.empty()) rc.baseline_window = "pre100";
  const TimeWindow bw = resolve_window(rc.baseline_window, samp_in);
  rc.baseline_window = window_string(bw);
  write_manifest(rc);

  std::map<std::string, erpreg::BootstrapBand> bands;
  std::vector<std::string> channels;
  erpreg::SamplingInfo samp;
  if (!rc.difference.empty()) {
    const auto parts = split(rc.difference, ',');
    if (parts.size() != 2)
      throw std::invalid_argument("--difference wants 'condA,condB'");
    const erpreg::DifferenceWave dw = erpreg::difference_wave(
        lr.epochs, parts[0], parts[1], rc.correction, bw, rc.threads);
    for (const auto& w : dw.warnings) std::cerr << "warning: " << w << '\n';
    bands.emplace(parts[0] + "-" + parts[1],
                  erpreg::bootstrap_band(dw.per_subject, rc.level, rc.n_boot,
                                         rc.seed, rc.threads));
    channels = dw.channels;
    samp = dw.sampling;
  } else {
    const erpreg::EpochSet corrected =
        correct_epochs(lr.epochs, rc.correction, bw, rc.threads);
    const erpreg::GrandAverage g = erpreg::grand_average(corrected);
    for (const auto& w : g.warnings) std::cerr << "warning: " << w << '\n';
    for (std::size_t ci = 0; ci < g.conditions.size(); ++ci) {
      std::vector<Eigen::MatrixXd> subj;
      for (const auto& [subject, m] : g.subject_means[ci]) subj.push_back(m);
      bands.emplace(g.conditions[ci],
                    erpreg::bootstrap_band(subj, rc.level, rc.n_boot,
                                           erpreg::derive_seed(rc.seed, ci),
                                           rc.threads));
    }
    channels = g.channels;
    samp = g.sampling;
  }
  erpreg::write_band_csv(bands, channels, samp, out_path(rc, "bands.csv"));

  if (!rc.svg.empty()) {
    int ch = 0;
    if (!rc.channel.empty()) {
      const auto it = std::find(channels.begin(), channels.end(), rc.channel);
      if (it == channels.end())
        throw std::invalid_argument("unknown channel '" + rc.channel + "'");
      ch = static_cast<int>(it - channels.begin());
    }
    std::vector<SvgSeries> series;
    for (const auto& [label, band] : bands)
      series.push_back({label, band.point.row(ch), band.lo.row(ch),
                        band.hi.row(ch)});
    write_band_svg(out_path(rc, rc.svg), channels[static_cast<std::size_t>(ch)],
                   samp, series);
  }
  return 0;
}

int cmd_corr(RunConfig& rc) {
  erpreg::LoadResult lr = erpreg::load_epochs(rc.input);
  if (rc.baseline_window.empty()) rc.baseline_window = "pre100";
  const TimeWindow bw = resolve_window(rc.baseline_window, lr.epochs.sampling());
  rc.baseline_window = window_string(bw);
  write_manifest(rc);
  const erpreg::CorrelationCurve c = erpreg::baseline_correlation_curve(
      lr.epochs, bw, rc.level, rc.n_boot, rc.seed, rc.threads);
  erpreg::write_curve_csv(c, out_path(rc, "correlation.csv"));
  return 0;
}

int cmd_power(RunConfig& rc) {
  if (rc.input.empty()) {
    const erpreg::SynthConfig c = resolve_synth(rc);
    write_manifest(rc);
    const auto results = erpreg::power_compare(c, split(rc.strategies, ','),
                                               rc.test, rc.n_sim, rc.seed,
                                               rc.threads);
    erpreg::write_power_csv(results, out_path(rc, "power.csv"));
    return 0;
  }
  if (rc.random_terms.empty())
    throw std::invalid_argument(
        "power --input needs --random (simulate-refit power is defined for "
        "mixed models); omit --input for the synthetic strategy comparison");
  if (rc.term.empty())
    throw std::invalid_argument(
        "power --input needs --term (a fixed-effect coefficient name)");
  LoadedTable lt = load_table(rc);
  if (rc.formula.empty()) rc.formula = "uv ~ baseline + condition";
  write_manifest(rc);
  const erpreg::PowerResult r = erpreg::power_estimate(
      lt.table, erpreg::parse_formula(rc.formula),
      erpreg::parse_random(rc.random_terms), rc.term, rc.test, rc.n_sim,
      rc.seed, rc.threads);
  erpreg::write_power_csv({r}, out_path(rc, "power.csv"));
  return 0;
}

int cmd_bayes(RunConfig& rc) {
  erpreg::TrialTable table;
  if (!rc.input.empty()) {
    LoadedTable lt = load_table(rc);
    table = std::move(lt.table);
  } else {
    const erpreg::SynthConfig c = resolve_synth(rc);
    table = erpreg::generate_table(c, rc.table_seed).table;
  }
  if (rc.formula.empty()) rc.formula = "uv ~ baseline + condition";
  const erpreg::ModelSpec spec = erpreg::parse_formula(rc.formula);
  erpreg::PriorSpec priors;
  priors.residual_df = rc.residual_df;
  priors.residual_scale = rc.residual_scale;
  for (const auto& s : rc.priors) priors.coefficients.insert(parse_prior(s));
  write_manifest(rc);

  const erpreg::PosteriorSamples s =
      erpreg::sample_posterior(table, spec, priors, rc.chains, rc.warmup,
                               rc.iters, rc.seed, rc.threads);
  erpreg::write_draws_csv(s, out_path(rc, "draws.csv"));
  erpreg::write_density_csv(s, priors, out_path(rc, "density.csv"));

  json params = json::array();
  for (std::size_t k = 0; k < s.names.size(); ++k) {
    const std::vector<double> draws = s.pooled(static_cast<int>(k));
    params.push_back({{"name", s.names[k]},
                      {"mean", erpreg::mean(draws)},
                      {"sd", std::sqrt(erpreg::sample_variance(draws))},
                      {"mode", erpreg::posterior_mode(draws)},
                      {"rhat", s.rhat[k]},
                      {"ess", s.ess[k]}});
  }
  const json j = {{"converged", s.converged}, {"n_chains", s.n_chains},
                  {"n_warmup", s.n_warmup},   {"n_iter", s.n_iter},
                  {"seed", s.seed},           {"params", params},
                  {"warnings", s.warnings}};
  std::ofstream out(out_path(rc, "posterior.json"));
  out << j.dump(2) << '\n';

  if (!s.converged) {
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
    std::cerr << "posterior did not converge (see posterior.json)\n";
    return 1;
  }
  return 0;
}

int cmd_compare(RunConfig& rc) {
  LoadedTable lt = load_table(rc);
  const erpreg::ModelSpec full_spec = erpreg::parse_formula(rc.formula);
  const erpreg::ModelSpec nested_spec = erpreg::parse_formula(rc.nested_formula);
  write_manifest(rc);

  json j;
  double delta_aic = 0.0, chi2 = 0.0, p = 1.0;
  int df = 0;
  if (rc.random_terms.empty() && rc.nested_random.empty()) {
    const erpreg::FittedGLM full = erpreg::fit_ols(lt.table, full_spec);
    const erpreg::FittedGLM nested = erpreg::fit_ols(lt.table, nested_spec);
    df = full.p - nested.p;
    if (df <= 0)
      throw std::invalid_argument(
          "the full model must have more coefficients than the nested one");
    chi2 = -2.0 * nested.loglik - (-2.0 * full.loglik);
    if (chi2 < 0.0)
      std::cerr << "warning: nested model has the higher likelihood; are the "
                   "models really nested?\n";
    p = erpreg::chi_squared_sf(std::max(chi2, 0.0), df);
    delta_aic = nested.aic - full.aic;
    j["full"] = {{"formula", rc.formula}, {"aic", full.aic},
                 {"loglik", full.loglik}, {"p", full.p}};
    j["nested"] = {{"formula", rc.nested_formula}, {"aic", nested.aic},
                   {"loglik", nested.loglik}, {"p", nested.p}};
  } else {
    const std::string nested_random =
        rc.nested_random.empty() ? rc.random_terms : rc.nested_random;
    const std::string full_random =
        rc.random_terms.empty() ? rc.nested_random : rc.random_terms;
    const erpreg::FittedLMM full =
        erpreg::fit_lmm(lt.table, full_spec, erpreg::parse_random(full_random));
    const erpreg::FittedLMM nested = erpreg::fit_lmm(
        lt.table, nested_spec, erpreg::parse_random(nested_random));
    const erpreg::LrtResult r = erpreg::lrt(nested, full);
    chi2 = r.chi2;
    df = r.df;
    p = r.p;
    delta_aic = nested.aic - full.aic;
    j["full"] = {{"formula", rc.formula}, {"random", full_random},
                 {"aic", full.aic}, {"loglik", full.loglik}};
    j["nested"] = {{"formula", rc.nested_formula}, {"random", nested_random},
                   {"aic", nested.aic}, {"loglik", nested.loglik}};
  }
  j["delta_aic"] = delta_aic;
  j["chi2"] = chi2;
  j["df"] = df;
  j["p_value"] = p;
  j["preferred_by_aic"] = delta_aic > 0.0 ? "full" : "nested";
  std::ofstream out(out_path(rc, "compare.json"));
  out << j.dump(2) << '\n';
  return 0;
}

int dispatch(RunConfig rc);

int cmd_rerun(const RunConfig& rc) {
  std::ifstream in(rc.input);
  if (!in) throw std::invalid_argument("cannot read manifest " + rc.input);
  RunConfig saved = json::parse(in).get<RunConfig>();
  if (saved.subcommand == "rerun")
    throw std::invalid_argument("refusing to rerun a rerun manifest");
  return dispatch(std::move(saved));
}

int dispatch(RunConfig rc) {
  std::filesystem::create_directories(rc.out);
  if (rc.subcommand == "simulate") return cmd_simulate(rc);
  if (rc.subcommand == "fit") return cmd_fit(rc);
  if (rc.subcommand == "pointwise") return cmd_pointwise(rc);
  if (rc.subcommand == "bands") return cmd_bands(rc);
  if (rc.subcommand == "corr") return cmd_corr(rc);
  if (rc.subcommand == "power") return cmd_power(rc);
  if (rc.subcommand == "bayes") return cmd_bayes(rc);
  if (rc.subcommand == "compare") return cmd_compare(rc);
  if (rc.subcommand == "rerun") return cmd_rerun(rc);
  throw std::invalid_argument("unknown subcommand '" + rc.subcommand + "'");
}

void add_window_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--baseline-window", rc.baseline_window,
                  "Baseline window: preset (pre100, pre200, pre500, post200, "
                  "whole) or 'start,end' ms [pre100]");
  cmd->add_option("--analysis-window", rc.analysis_window,
                  "Analysis window as 'start,end' ms [350,600]");
}

void add_synth_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--preset", rc.preset,
                  "Named scenario: s3-variance, power-ordering, lmm-crossed, "
                  "or bayes-escape");
  cmd->add_option("--subjects", rc.subjects, "Number of subjects");
  cmd->add_option("--items", rc.items, "Number of items");
  cmd->add_option("--trials-per-cell", rc.trials_per_cell,
                  "Replicates per (subject, item, condition)");
  cmd->add_option("--conditions", rc.conditions,
                  "Comma-separated condition names");
  cmd->add_option("--effect", rc.effect, "True condition effect (uV)");
  cmd->add_option("--sigma", rc.sigma, "Trial-level residual SD");
  cmd->add_option("--sigma-baseline", rc.sigma_baseline,
                  "SD of the latent baseline state");
  cmd->add_option("--mu-baseline", rc.mu_baseline,
                  "Mean of the latent baseline state");
  cmd->add_option("--coupling", rc.coupling,
                  "Generative baseline weight in the analysis window");
  cmd->add_option("--drift-rate", rc.drift_rate, "Linear drift (uV/s)");
  cmd->add_option("--sd-subject", rc.sd_subject, "Subject intercept SD");
  cmd->add_option("--sd-item", rc.sd_item, "Item intercept SD");
  cmd->add_option("--within-noise", rc.within_noise,
                  "Per-sample measurement noise SD (default: sigma)");
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  CLI::App app{
      "Regression-based baseline correction for ERP analysis: simulation, "
      "model fitting, inference, power, and Bayesian posteriors."};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand(
      "simulate", "Generate a synthetic epoched dataset (epochs.csv + "
                  "epochs.meta.json + truth.json)");
  add_synth_options(sim, rc);
  add_window_options(sim, rc);
  sim->add_option("--seed", rc.seed, "RNG seed")->required();
  sim->add_option("--out", rc.out, "Output directory");

  auto* fit = app.add_subcommand(
      "fit", "Fit a window-mean model under a baseline strategy (summary.txt "
             "+ summary.json + coefficients.csv)");
  fit->add_option("--input", rc.input, "Epochs CSV")->required();
  fit->add_flag("--rois", rc.use_rois, "Collapse channels to sidecar ROIs");
  add_window_options(fit, rc);
  fit->add_option("--formula", rc.formula, "Model formula [uv ~ condition]");
  fit->add_option("--random", rc.random_terms,
                  "Random-effects terms, e.g. '(1 | subject) + (1 | item)'; "
                  "empty = ordinary least squares");
  fit->add_option("--strategy", rc.strategy,
                  "none | traditional | regression | regression-pairwise | "
                  "regression-full [regression]");
  fit->add_option("--out", rc.out, "Output directory");

  auto* pw = app.add_subcommand(
      "pointwise", "Per-(channel, sample) GLM fits (pointwise.csv)");
  pw->add_option("--input", rc.input, "Epochs CSV")->required();
  pw->add_option("--baseline-window", rc.baseline_window,
                 "Baseline window preset or 'start,end' ms [pre100]");
  pw->add_option("--formula", rc.formula,
                 "Pointwise formula [uv ~ baseline + condition]");
  pw->add_option("--threads", rc.threads, "Worker threads (0 = hardware)");
  pw->add_option("--out", rc.out, "Output directory");

  auto* bands = app.add_subcommand(
      "bands", "Bootstrap bands around condition means or a difference wave "
               "(bands.csv, optional SVG)");
  bands->add_option("--input", rc.input, "Epochs CSV")->required();
  bands->add_option("--baseline-window", rc.baseline_window,
                    "Baseline window preset or 'start,end' ms [pre100]");
  bands->add_option("--difference", rc.difference,
                    "Two condition names 'A,B': band of the A-B difference "
                    "wave instead of per-condition bands");
  bands->add_option("--correction", rc.correction,
                    "Single-trial correction first: none | traditional | "
                    "regression [none]");
  bands->add_option("--level", rc.level, "Band level [0.95]");
  bands->add_option("--n-boot", rc.n_boot, "Bootstrap replicates [2000]");
  bands->add_option("--channel", rc.channel, "Channel for --svg [first]");
  bands->add_option("--svg", rc.svg,
                    "Also render this file (inside --out) as an SVG line plot");
  bands->add_option("--seed", rc.seed, "RNG seed")->required();
  bands->add_option("--threads", rc.threads, "Worker threads (0 = hardware)");
  bands->add_option("--out", rc.out, "Output directory");

  auto* corr = app.add_subcommand(
      "corr", "Baseline-voltage correlation curve r(t) with bootstrap band "
              "(correlation.csv)");
  corr->add_option("--input", rc.input, "Epochs CSV")->required();
  corr->add_option("--baseline-window", rc.baseline_window,
                   "Baseline window preset or 'start,end' ms [pre100]");
  corr->add_option("--level", rc.level, "Band level [0.95]");
  corr->add_option("--n-boot", rc.n_boot, "Bootstrap replicates [2000]");
  corr->add_option("--seed", rc.seed, "RNG seed")->required();
  corr->add_option("--threads", rc.threads, "Worker threads (0 = hardware)");
  corr->add_option("--out", rc.out, "Output directory");

  auto* power = app.add_subcommand(
      "power", "Monte Carlo power: strategy comparison on synthetic data, or "
               "simulate-refit on --input (power.csv)");
  power->add_option("--input", rc.input,
                    "Epochs CSV for simulate-refit power (omit for the "
                    "synthetic strategy comparison)");
  add_synth_options(power, rc);
  add_window_options(power, rc);
  power->add_option("--formula", rc.formula,
                    "Fixed effects for --input mode [uv ~ baseline + condition]");
  power->add_option("--random", rc.random_terms,
                    "Random-effects terms for --input mode");
  power->add_option("--term", rc.term,
                    "Tested coefficient for --input mode, e.g. "
                    "'condition[S.match]'");
  power->add_option("--strategies", rc.strategies,
                    "Strategies to compare [none,traditional,regression]");
  power->add_option("--test", rc.test, "t | lrt [lrt]");
  power->add_option("--n-sim", rc.n_sim, "Simulated datasets [1000]");
  power->add_option("--seed", rc.seed, "RNG seed")->required();
  power->add_option("--threads", rc.threads, "Worker threads (0 = hardware)");
  power->add_option("--out", rc.out, "Output directory");

  auto* bayes = app.add_subcommand(
      "bayes", "Bayesian posterior for the window-mean GLM (draws.csv + "
               "density.csv + posterior.json)");
  bayes->add_option("--input", rc.input,
                    "Epochs CSV (omit to sample a synthetic table)");
  add_synth_options(bayes, rc);
  add_window_options(bayes, rc);
  bayes->add_option("--table-seed", rc.table_seed,
                    "Seed for the synthetic table in --preset mode [0]");
  bayes->add_option("--formula", rc.formula,
                    "Model formula [uv ~ baseline + condition]");
  bayes->add_option("--prior", rc.priors,
                    "Coefficient prior, repeatable: name=normal(loc,scale), "
                    "name=t(df,loc,scale), or name=tvar(df,loc,variance)");
  bayes->add_option("--residual-df", rc.residual_df,
                    "Half-t df for the residual SD prior [3]");
  bayes->add_option("--residual-scale", rc.residual_scale,
                    "Half-t scale for the residual SD prior [10]");
  bayes->add_option("--chains", rc.chains, "MCMC chains [4]");
  bayes->add_option("--warmup", rc.warmup, "Warm-up sweeps per chain [1000]");
  bayes->add_option("--iters", rc.iters, "Post-warmup draws per chain [5000]");
  bayes->add_option("--seed", rc.seed, "RNG seed")->required();
  bayes->add_option("--threads", rc.threads, "Worker threads (0 = hardware)");
  bayes->add_option("--out", rc.out, "Output directory");

  auto* compare = app.add_subcommand(
      "compare", "Nested-model comparison: delta AIC + likelihood-ratio test "
                 "(compare.json)");
  compare->add_option("--input", rc.input, "Epochs CSV")->required();
  add_window_options(compare, rc);
  compare->add_option("--formula", rc.formula, "Full model formula")->required();
  compare->add_option("--nested", rc.nested_formula, "Nested model formula")
      ->required();
  compare->add_option("--random", rc.random_terms,
                      "Random-effects terms for the full model (switches both "
                      "fits to mixed models)");
  compare->add_option("--nested-random", rc.nested_random,
                      "Random-effects terms for the nested model [--random]");
  compare->add_option("--out", rc.out, "Output directory");

  auto* rerun = app.add_subcommand(
      "rerun", "Re-execute a saved run.json manifest byte-identically");
  rerun->add_option("manifest", rc.input, "Path to run.json")->required();

  for (auto* cmd : {sim, fit, pw, bands, corr, power, bayes, compare, rerun}) {
    const std::string name = cmd->get_name();
    cmd->callback([&rc, name] { rc.subcommand = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    return dispatch(std::move(rc));
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
