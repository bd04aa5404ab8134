#include "erpreg/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/QR>

#include "erpreg/stats.hpp"

namespace erpreg {

int Factor::level_index(const std::string& level) const {
  auto it = std::find(levels.begin(), levels.end(), level);
  return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
}

Factor make_factor(const std::string& name, const std::vector<std::string>& values,
                   const std::vector<std::string>& level_order) {
  std::set<std::string> observed(values.begin(), values.end());
  Factor f;
  f.name = name;
  if (level_order.empty()) {
    f.levels.assign(observed.begin(), observed.end());
  } else {
    std::set<std::string> given(level_order.begin(), level_order.end());
    if (given.size() != level_order.size())
      throw std::invalid_argument("duplicate level in order for factor '" + name + "'");
    for (const auto& v : observed)
      if (!given.count(v))
        throw std::invalid_argument("factor '" + name + "' has observed level '" + v +
                                    "' missing from the requested order");
    for (const auto& l : level_order)
      if (observed.count(l)) f.levels.push_back(l);
  }
  if (f.levels.size() < 2)
    throw std::invalid_argument("factor '" + name + "' needs at least 2 levels, got " +
                                std::to_string(f.levels.size()));
  return f;
}

Eigen::MatrixXd sum_code(const Factor& f) {
  const int k = static_cast<int>(f.levels.size());
  if (k < 2) throw std::invalid_argument("sum coding needs >= 2 levels");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, k - 1);
  for (int j = 0; j < k - 1; ++j) {
    c(j, j) = 1.0;
    c(k - 1, j) = -1.0;
  }
  return c;
}

bool ModelSpec::center_for(const std::string& covariate) const {
  auto it = center.find(covariate);
  if (it != center.end()) return it->second;
  return covariate == "baseline";
}

bool ModelSpec::scale_for(const std::string& covariate) const {
  auto it = scale.find(covariate);
  return it != scale.end() && it->second;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string piece;
  while (std::getline(ss, piece, sep)) out.push_back(piece);
  return out;
}

}  // namespace

ModelSpec parse_formula(const std::string& formula) {
  ModelSpec spec;
  std::string rhs = formula;
  if (auto tilde = formula.find('~'); tilde != std::string::npos) {
    spec.response = trim(formula.substr(0, tilde));
    if (spec.response.empty())
      throw std::invalid_argument("formula has '~' but no response: " + formula);
    rhs = formula.substr(tilde + 1);
  }
  bool saw_term = false;
  for (const std::string& raw : split(rhs, '+')) {
    const std::string term = trim(raw);
    if (term.empty())
      throw std::invalid_argument("empty term in formula: " + formula);
    if (term == "1") {
      spec.intercept = true;
      saw_term = true;
      continue;
    }
    if (term == "0" || term == "-1") {
      spec.intercept = false;
      saw_term = true;
      continue;
    }
    std::vector<std::string> names;
    for (const std::string& part : split(term, ':')) {
      const std::string n = trim(part);
      if (n.empty())
        throw std::invalid_argument("empty interaction component in '" + term + "'");
      names.push_back(n);
    }
    spec.terms.push_back(std::move(names));
    saw_term = true;
  }
  if (!saw_term) throw std::invalid_argument("formula has no terms: " + formula);
  return spec;
}

std::string format_formula(const ModelSpec& spec) {
  std::string out = spec.response + " ~ ";
  std::vector<std::string> pieces;
  pieces.push_back(spec.intercept ? "1" : "0");
  for (const auto& term : spec.terms) {
    std::string t = term[0];
    for (std::size_t i = 1; i < term.size(); ++i) t += ":" + term[i];
    pieces.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < pieces.size(); ++i)
    out += (i ? " + " : "") + pieces[i];
  return out;
}

bool DesignColumn::involves(const std::string& covariate) const {
  for (const auto& p : parts)
    if (p.is_covariate && p.name == covariate) return true;
  return false;
}

const Factor* DesignMatrix::factor(const std::string& name) const {
  for (const auto& f : factors)
    if (f.name == name) return &f;
  return nullptr;
}

namespace {

// A term component resolved against the table: either a numeric column or a
// factor with its per-row level indices and contrast matrix.
struct Resolved {
  bool is_covariate = false;
  std::string name;
  std::vector<double> numeric;     // centered/scaled values, one per row
  double scale_divisor = 1.0;      // sd applied to `numeric` (1 if unscaled)
  Factor factor;                   // when categorical
  std::vector<int> level_of_row;
  Eigen::MatrixXd contrasts;       // k x (k-1)
};

const std::vector<std::string>* categorical_column(const TrialTable& t,
                                                   const std::string& name) {
  if (name == "condition") return &t.condition;
  if (name == "subject") return &t.subject;
  if (name == "item") return &t.item;
  if (name == "roi") {
    if (t.unit_kind != "roi")
      throw std::invalid_argument("'roi' requested but the table is channel-level; "
                                  "collapse with an ROI map first");
    return &t.unit;
  }
  if (name == "channel") {
    if (t.unit_kind != "channel")
      throw std::invalid_argument("'channel' requested but the table is ROI-level");
    return &t.unit;
  }
  return nullptr;
}

}  // namespace

DesignMatrix build_design(const TrialTable& t, const ModelSpec& spec,
                          bool allow_rank_deficient) {
  const std::size_t n = t.n_rows();
  if (n == 0) throw std::invalid_argument("cannot build a design from an empty table");

  {
    std::set<std::vector<std::string>> seen;
    for (auto term : spec.terms) {
      std::sort(term.begin(), term.end());
      if (!seen.insert(term).second) {
        std::string flat = term[0];
        for (std::size_t i = 1; i < term.size(); ++i) flat += ":" + term[i];
        throw std::invalid_argument("duplicate term '" + flat + "' in model spec");
      }
    }
  }

  DesignMatrix d;
  d.response_name = spec.response;

  std::map<std::string, Resolved> cache;
  auto resolve = [&](const std::string& name) -> Resolved& {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    Resolved r;
    r.name = name;
    if (const auto* col = categorical_column(t, name)) {
      r.is_covariate = false;
      auto order_it = spec.level_order.find(name);
      r.factor = make_factor(name, *col,
                             order_it == spec.level_order.end()
                                 ? std::vector<std::string>{}
                                 : order_it->second);
      r.contrasts = sum_code(r.factor);
      r.level_of_row.reserve(n);
      for (const auto& v : *col) r.level_of_row.push_back(r.factor.level_index(v));
      d.factors.push_back(r.factor);
    } else {
      auto cov = t.covariates.find(name);
      if (cov == t.covariates.end())
        throw std::invalid_argument("name '" + name +
                                    "' resolves to neither a factor nor a covariate");
      r.is_covariate = true;
      r.numeric = cov->second;
      for (double v : r.numeric)
        if (!std::isfinite(v))
          throw std::invalid_argument("covariate '" + name + "' has a non-finite value");
      if (spec.center_for(name)) {
        const double m = mean(r.numeric);
        for (double& v : r.numeric) v -= m;
        d.covariate_center[name] = m;
      } else {
        d.covariate_center[name] = 0.0;
      }
      if (spec.scale_for(name)) {
        const double sd = std::sqrt(sample_variance(r.numeric));
        if (!(sd > 0.0))
          throw std::invalid_argument("covariate '" + name +
                                      "' has zero variance; cannot scale");
        for (double& v : r.numeric) v /= sd;
        r.scale_divisor = sd;
        d.covariate_scale[name] = sd;
      } else {
        d.covariate_scale[name] = 1.0;
      }
    }
    return cache.emplace(name, std::move(r)).first->second;
  };

  std::vector<Eigen::VectorXd> cols;
  if (spec.intercept) {
    cols.push_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
    d.names.push_back("(Intercept)");
    d.columns.push_back(DesignColumn{{}, "(Intercept)", 1.0});
  }

  for (const auto& term : spec.terms) {
    std::vector<Resolved*> parts;
    for (const auto& name : term) parts.push_back(&resolve(name));

    // Cross product of contrast choices; the first factor varies fastest.
    std::vector<int> contrast_dims;
    for (const Resolved* p : parts)
      contrast_dims.push_back(p->is_covariate
                                  ? 1
                                  : static_cast<int>(p->contrasts.cols()));
    int combos = 1;
    for (int dc : contrast_dims) combos *= dc;

    for (int combo = 0; combo < combos; ++combo) {
      std::vector<int> pick(parts.size());
      int rest = combo;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        pick[i] = rest % contrast_dims[i];
        rest /= contrast_dims[i];
      }

      Eigen::VectorXd col = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
      DesignColumn recipe;
      std::string name;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        const Resolved* p = parts[i];
        if (!name.empty()) name += ":";
        if (p->is_covariate) {
          for (std::size_t r = 0; r < n; ++r) col[r] *= p->numeric[r];
          name += p->name;
          recipe.parts.push_back({true, p->name, 0});
          recipe.scale_divisor *= p->scale_divisor;
        } else {
          const int j = pick[i];
          for (std::size_t r = 0; r < n; ++r)
            col[r] *= p->contrasts(p->level_of_row[r], j);
          name += p->name + "[S." + p->factor.levels[j] + "]";
          recipe.parts.push_back({false, p->name, j});
        }
      }
      recipe.name = name;
      cols.push_back(std::move(col));
      d.names.push_back(name);
      d.columns.push_back(std::move(recipe));
    }
  }

  if (cols.empty())
    throw std::invalid_argument("model spec produces no columns (no intercept, no terms)");

  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) d.X.col(static_cast<Eigen::Index>(j)) = cols[j];

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
  qr.setThreshold(std::numeric_limits<double>::epsilon() *
                  static_cast<double>(std::max(d.X.rows(), d.X.cols())));
  d.rank = static_cast<int>(qr.rank());
  if (d.rank < d.p() && !allow_rank_deficient)
    throw std::runtime_error("design matrix is rank-deficient (rank " +
                             std::to_string(d.rank) + " of " + std::to_string(d.p()) +
                             " columns)");
  return d;
}

Eigen::RowVectorXd design_row(const DesignMatrix& d,
                              const std::map<std::string, std::string>& levels,
                              const std::map<std::string, double>& covariates) {
  Eigen::RowVectorXd row(d.p());
  for (int j = 0; j < d.p(); ++j) {
    double v = 1.0;
    for (const auto& part : d.columns[j].parts) {
      if (part.is_covariate) {
        auto it = covariates.find(part.name);
        if (it == covariates.end())
          throw std::invalid_argument("design_row: missing covariate '" + part.name + "'");
        v *= it->second - d.covariate_center.at(part.name);
      } else {
        const Factor* f = d.factor(part.name);
        auto it = levels.find(part.name);
        if (f == nullptr || it == levels.end())
          throw std::invalid_argument("design_row: missing level for factor '" +
                                      part.name + "'");
        const int li = f->level_index(it->second);
        if (li < 0)
          throw std::invalid_argument("design_row: unknown level '" + it->second +
                                      "' for factor '" + part.name + "'");
        const int k = static_cast<int>(f->levels.size());
        v *= (li == part.contrast_index) ? 1.0 : (li == k - 1 ? -1.0 : 0.0);
      }
    }
    row[j] = v;
  }
  return row;
}

}  // namespace erpreg
