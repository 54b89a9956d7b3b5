#pragma once

// Closed model-term grammar and design-matrix construction.
//
//   expr   := piece ('+' piece)*
//   piece  := '0' | '1' | '-1' | factor ('*' factor)* | factor (':' factor)*
//   factor := name | ns(time, df) | dns(time, df) | ins(time, df)
//
// `a*b` expands to a + b + a:b. Main effects precede interactions in the
// resulting column order. Factors expand to treatment-contrast indicators
// against their first level.

#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jmx {

/// Covariate values of one record, keyed by column name (raw text).
using Covariates = std::map<std::string, std::string>;

struct Term {
  enum class Kind { Covariate, Time, Ns, Dns, Ins, Interaction };
  Kind kind = Kind::Covariate;
  std::string name;          // covariate or time variable
  int df = 0;                // spline terms
  std::vector<Term> parts;   // interaction components

  std::string label() const;
  int order() const { return kind == Kind::Interaction ? static_cast<int>(parts.size()) : 1; }
  bool operator==(const Term& other) const { return label() == other.label(); }
};

struct TermList {
  bool intercept = true;
  std::vector<Term> terms;

  /// `default_intercept` applies when the expression has neither 0 nor 1.
  static TermList parse(const std::string& expr, const std::string& time_var,
                        bool default_intercept = true);
  std::string str() const;

  std::set<std::string> covariates() const;
  std::set<int> spline_dfs() const;
  bool empty() const { return !intercept && terms.empty(); }
};

struct SplineKnots {
  double low = 0.0;
  double high = 1.0;
  std::vector<double> interior;
};

/// Everything needed to evaluate a TermList away from the training data.
struct DesignContext {
  std::string time_var;
  std::map<int, SplineKnots> splines;                     // keyed by df
  std::map<std::string, std::vector<std::string>> factors;  // covariate -> levels

  bool is_factor(const std::string& name) const { return factors.count(name) > 0; }
};

/// Knots for every spline df used by `lists` (interior at quantiles k/df of
/// `times`, boundary at their range) and factor levels for every
/// non-numeric covariate. `level_overrides` fixes the level order.
DesignContext make_design_context(const std::string& time_var,
                                  const std::vector<const TermList*>& lists,
                                  const std::vector<double>& times,
                                  const std::map<std::string, std::vector<std::string>>& observed,
                                  const std::map<std::string, std::vector<std::string>>& level_overrides);

std::vector<std::string> column_names(const TermList& terms, const DesignContext& ctx);
Eigen::Index design_width(const TermList& terms, const DesignContext& ctx);

Eigen::RowVectorXd design_row(const TermList& terms, const DesignContext& ctx, double t,
                              const Covariates& cov);

/// One row per (time, covariates) pair, columns in TermList order.
Eigen::MatrixXd build_design(const TermList& terms, const DesignContext& ctx,
                             const std::vector<double>& times,
                             const std::vector<Covariates>& cov);

}  // namespace jmx
