#pragma once

// Predictive accuracy: Kaplan-Meier, time-dependent AUC, dynamic
// concordance, prediction error and cross-validation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jmx/fit.hpp"
#include "jmx/model.hpp"

namespace jmx {

struct KMCurve {
  std::vector<double> times;    // distinct event times, ascending
  std::vector<double> surv;     // S just after each time
  std::vector<int> at_risk;
  std::vector<int> events;

  /// Right-continuous step function; 1 before the first event time.
  double at(double t) const;
};

KMCurve kaplan_meier(const std::vector<double>& times, const std::vector<int>& status);

struct MetricReport {
  std::string metric;       // "AUC", "dynC", "PE", "IPE"
  double value = 0.0;
  double tstart = 0.0;
  double thoriz = 0.0;
  double dt = 0.0;
  std::size_t at_risk = 0;
  std::string loss;         // PE / IPE only
  double interval_lo = 0.0; // dynC follow-up interval
  double interval_hi = 0.0;
  std::size_t pairs = 0;    // AUC: comparable plus censoring-weighted pairs
};

// ---------------------------------------------------------------------------
// Estimators on given predictions

struct AucInput {
  double T = 0.0;
  int delta = 0;
  double pi = 0.0;   // predicted Pr(T > t + dt | T > t)
  double nu = 0.0;   // censored in the window: 1 - Pr(T > t + dt | T > T_i)
};

struct AucParts {
  double concordant1 = 0, pairs1 = 0;   // comparable pairs
  double concordant2 = 0, pairs2 = 0;   // weighted censored pairs
  double value() const;                 // pooled ratio
};

/// Pair counting over subjects at risk at t. `tie_credit` is the credit
/// given to pairs with equal predictions (0 by default).
AucParts auc_pairs(const std::vector<AucInput>& subjects, double t, double dt,
                   double tie_credit = 0.0);

using LossFunction = std::function<double(double)>;
LossFunction loss_by_name(const std::string& name);

struct PeInput {
  double T = 0.0;
  int delta = 0;
  double pi_t = 0.0;    // Pr(T > u | T > t)
  double pi_Ti = 0.0;   // Pr(T > u | T > T_i), used when censored before u
};

/// Three-term estimator over subjects at risk at t.
double pe_from_predictions(const std::vector<PeInput>& subjects, double t, double u,
                           const LossFunction& loss);

/// C-index combination: sum w_k auc_k Pr_k / sum w_k Pr_k, skipping NaN nodes.
double dyn_c_combine(const std::vector<double>& weights, const std::vector<double>& auc,
                     const std::vector<double>& pr_comparable);

// ---------------------------------------------------------------------------
// Model-based metrics

struct MetricOptions {
  bool monte_carlo = false;   // first-order predictions otherwise
  int M = 200;
  std::uint64_t seed = 1;
  double tie_credit = 0.0;
  std::string loss = "square";
  int threads = 1;
};

/// Pr(T > u | T > cond_time, data up to data_time) for each u, first-order
/// or Monte Carlo according to `opt`.
std::vector<double> predict_survival(const ModelStructure& s, const Draws& draws,
                                     const RawSubject& raw, double data_time, double cond_time,
                                     const std::vector<double>& horizons, const MetricOptions& opt);

MetricReport auc_dynamic(const ModelStructure& s, const Draws& draws,
                         const std::vector<RawSubject>& subjects, double tstart, double dt,
                         const MetricOptions& opt = {});

MetricReport dyn_c_index(const ModelStructure& s, const Draws& draws,
                         const std::vector<RawSubject>& subjects, double dt,
                         const MetricOptions& opt = {});

MetricReport pred_err(const ModelStructure& s, const Draws& draws,
                      const std::vector<RawSubject>& subjects, double tstart, double thoriz,
                      const MetricOptions& opt = {});

MetricReport int_pred_err(const ModelStructure& s, const Draws& draws,
                          const std::vector<RawSubject>& subjects, double tstart, double thoriz,
                          const MetricOptions& opt = {});

struct CrossValidationResult {
  std::vector<std::vector<std::size_t>> test_folds;   // subject indices
  std::vector<MetricReport> auc;                      // per fold
  std::vector<MetricReport> pe;
  double mean_auc = 0.0;
  double mean_pe = 0.0;
};

/// Subject-level split into `folds` groups by a seeded shuffle.
std::vector<std::vector<std::size_t>> cv_splits(std::size_t n, int folds, std::uint64_t seed);

/// Refits the model on each training split and scores AUC(tstart, thoriz -
/// tstart) and PE(thoriz | tstart) on the held-out subjects. Folds run on
/// up to `threads` workers.
CrossValidationResult cross_validate(const ModelSpec& spec, const Table& long_table,
                                     const Table* surv_table, int folds, double tstart,
                                     double thoriz, std::uint64_t seed, int threads = 1,
                                     const MetricOptions& opt = {});

}  // namespace jmx
