#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "erpreg/epochs.hpp"
#include "erpreg/types.hpp"

namespace erpreg {

// Generative model, per trial j of subject s, item i, condition c:
//   sample(t) = u_s + v_i + drift_rate * t/1000 + w(t)
//               + [t in baseline window] * b_j
//               + [t in analysis window] * (x_c * true_effect + coupling * b_j + eps_j)
// with u_s ~ N(0, sd_subject^2), v_i ~ N(0, sd_item^2),
// b_j ~ N(mu_baseline, sigma_baseline^2), eps_j ~ N(0, sigma^2), and
// per-sample measurement noise w(t) ~ N(0, within_noise_sd^2). x_c is the
// first sum contrast of the condition (+1 first level, -1 last, 0 otherwise).
struct SynthConfig {
  int n_subjects = 20;
  int n_items = 40;
  int n_trials_per_cell = 1;  // replicates per (subject, item, condition)
  std::vector<std::string> conditions = {"match", "mismatch"};

  double true_effect_uv = 0.0;
  double sigma = 1.0;
  double sigma_baseline = 0.5;
  double mu_baseline = 0.0;
  double drift_coupling = 0.0;  // the generative baseline weight
  double drift_rate_uv_per_s = 0.0;
  double random_sd_subject = 0.0;
  double random_sd_item = 0.0;
  // Noise of each raw sample around its trial-level value; the measured
  // baseline feature is then a noisy estimate of b. Negative = default sigma.
  double within_noise_sd = -1.0;
  // Optional per-condition baseline-noise SDs (heteroskedastic variant).
  std::map<std::string, double> sigma_baseline_by_condition;

  SamplingInfo sampling{500.0, -200.0, 501};
  TimeWindow baseline_window{-100.0, 0.0};
  TimeWindow analysis_window{350.0, 600.0};

  double within_sd() const { return within_noise_sd < 0.0 ? sigma : within_noise_sd; }
  double baseline_sd_for(const std::string& condition) const;
  int n_trials() const {
    return n_subjects * n_items * static_cast<int>(conditions.size()) *
           n_trials_per_cell;
  }
  void validate() const;  // throws std::invalid_argument
};

// Exact latent values behind a generated dataset, for oracle checks.
struct SynthTruth {
  std::vector<std::string> subjects;
  std::vector<std::string> items;
  std::vector<double> subject_intercept;  // aligned with subjects
  std::vector<double> item_intercept;     // aligned with items
  // Per trial, aligned with the generated trial order:
  std::vector<double> baseline_state;   // b_j
  std::vector<double> epsilon;          // eps_j
  std::vector<double> condition_value;  // x_c
};

struct SynthEpochs {
  EpochSet epochs;
  SynthTruth truth;
};

// Full per-sample generation on the single channel "Cz".
SynthEpochs generate(const SynthConfig& c, std::uint64_t seed);

struct SynthTable {
  TrialTable table;
  SynthTruth truth;
};

// Window-mean-level shortcut: draws the same trial-level latents and the
// exact distribution of the two window means (within-sample noise enters as
// its window average). Rows match what make_analysis_table produces from
// generate()'s epochs, so Monte Carlo loops can skip per-sample work.
SynthTable generate_table(const SynthConfig& c, std::uint64_t seed);

// Residual variance of the window-mean model implied by the generative
// assumptions with drift_coupling = 0: sigma^2 for "none" and "regression",
// sigma^2 + sigma_baseline^2 for "traditional". Throws std::domain_error when
// drift_coupling != 0 (outside the formula's regime) and
// std::invalid_argument for unknown strategies.
double theoretical_residual_variance(const SynthConfig& c, const std::string& strategy);

// Ground truth as JSON (config echo + latents), for saving beside epoch CSVs.
void write_truth_json(const SynthConfig& c, const SynthTruth& t,
                      const std::string& path);

// Named configurations used by the validation suite and the CLI:
//   "s3-variance":    20,000 trials, sigma=1, sigma_baseline=0.5, no coupling,
//                     no effect, no random intercepts, no within-sample noise.
//   "power-ordering": s3-variance plus a condition effect sized near 70%
//                     regression-model power at this n.
//   "lmm-crossed":    200 trials with crossed subject/item intercepts.
//   "bayes-escape":   5,000 trials with drift_coupling = -0.2.
SynthConfig preset_config(const std::string& name);

}  // namespace erpreg
