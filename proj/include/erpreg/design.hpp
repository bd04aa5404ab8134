#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "erpreg/types.hpp"

namespace erpreg {

// Categorical predictor with a fixed, deterministic level order.
struct Factor {
  std::string name;
  std::vector<std::string> levels;  // unique, >= 2

  int level_index(const std::string& level) const;  // -1 if absent
};

// Collects the distinct values of `values` into a Factor. Levels follow
// `level_order` when given (must cover every observed value), else sort
// lexicographically. Throws std::invalid_argument on <2 levels.
Factor make_factor(const std::string& name, const std::vector<std::string>& values,
                   const std::vector<std::string>& level_order = {});

// Sum-to-zero contrasts: k x (k-1) matrix whose row is a level. Column j is
// +1 on level j, -1 on the last level, 0 elsewhere.
Eigen::MatrixXd sum_code(const Factor& f);

// Symbolic model: response ~ terms, where each term multiplies factor and/or
// covariate names (`baseline:condition`). The intercept is on unless the
// formula removes it with `0` or `-1`.
struct ModelSpec {
  std::string response = "uv";
  bool intercept = true;
  std::vector<std::vector<std::string>> terms;

  // Covariate treatment. Absent entries fall back to the defaults:
  // "baseline" is centered, nothing is scaled.
  std::map<std::string, bool> center;
  std::map<std::string, bool> scale;

  // Optional explicit level orders, keyed by factor name.
  std::map<std::string, std::vector<std::string>> level_order;

  bool center_for(const std::string& covariate) const;
  bool scale_for(const std::string& covariate) const;
};

// Parses `uv ~ baseline + roi + condition + baseline:roi`, or a bare
// right-hand side without `~` (response defaults to "uv").
ModelSpec parse_formula(const std::string& formula);

// Canonical one-line rendering, e.g. for run manifests.
std::string format_formula(const ModelSpec& spec);

// Recipe for one design column, kept so prediction rows can be rebuilt.
struct DesignColumn {
  struct Part {
    bool is_covariate = false;
    std::string name;        // covariate or factor name
    int contrast_index = 0;  // which sum-coded column, for factor parts
  };
  std::vector<Part> parts;  // empty for the intercept
  std::string name;
  double scale_divisor = 1.0;  // product of sd divisors applied to this column

  bool involves(const std::string& covariate) const;
};

struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  std::vector<DesignColumn> columns;
  std::vector<Factor> factors;                     // resolved, in first-use order
  std::map<std::string, double> covariate_center;  // applied offsets (0 if none)
  std::map<std::string, double> covariate_scale;   // applied sd divisors (1 if none)
  std::string response_name;
  int rank = 0;

  int p() const { return static_cast<int>(names.size()); }
  const Factor* factor(const std::string& name) const;  // nullptr if absent
};

// Expands spec against the table: intercept, sum-coded factor blocks, centered
// (and optionally sd-scaled) covariates, interactions as elementwise products.
// Factor names resolve to table columns ("condition", "subject", "item", and
// "roi"/"channel" for the unit column); anything else must be a covariate.
// Throws on unresolvable names, non-finite covariates, duplicate terms, and
// rank deficiency (unless allow_rank_deficient).
DesignMatrix build_design(const TrialTable& t, const ModelSpec& spec,
                          bool allow_rank_deficient = false);

// One design row in the centered, *unscaled* parameterization — the same one
// reported coefficients live in — evaluated at the given factor levels and raw
// covariate values. Throws when a needed level or covariate is missing.
Eigen::RowVectorXd design_row(const DesignMatrix& d,
                              const std::map<std::string, std::string>& levels,
                              const std::map<std::string, double>& covariates);

}  // namespace erpreg
