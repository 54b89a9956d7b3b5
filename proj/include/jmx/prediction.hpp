#pragma once

// Subject-specific predictions: random-effects modes, dynamic survival
// probabilities, longitudinal trajectories and model averaging.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmx/mcmc.hpp"
#include "jmx/model.hpp"

namespace jmx {

struct RandomEffectsMode {
  Eigen::VectorXd b;
  Eigen::MatrixXd neg_hessian;   // of log p(y, T, b) at the mode
  double log_joint = 0.0;
  bool converged = false;
};

/// Mode of log p(y_i, T_i, delta_i, b | theta) over b.
RandomEffectsMode random_effects_mode(const ModelStructure& s, const SubjectData& subj,
                                      const Params& theta,
                                      const Eigen::VectorXd* start = nullptr);

/// Laplace approximation of log \int p(y_i, T_i, delta_i | b) p(b) db.
double subject_laplace_loglik(const ModelStructure& s, const SubjectData& subj,
                              const Params& theta);

/// Subject data restricted to measurements at or before `last_time`, with
/// the subject known to be event-free up to `last_time`.
SubjectData conditioning_data(const ModelStructure& s, const RawSubject& raw, double last_time);

/// Time of the last measurement of a subject.
double last_measurement(const RawSubject& raw);

/// 35 equally spaced points from the smallest observed time to the 0.9
/// quantile (+0.01), restricted to points after `last_time`.
std::vector<double> default_survfit_grid(const ModelStructure& s, double last_time);

struct SurvfitOptions {
  std::vector<double> times;            // empty: default grid
  std::optional<double> last_time;      // empty: last measurement
  int M = 200;
  bool simulate = true;
  std::uint64_t seed = 1;
  double level = 0.95;
  int mh_steps = 5;
};

struct SurvfitRow {
  double time = 0.0;
  double mean = 1.0;
  double median = 1.0;
  double lower = 1.0;
  double upper = 1.0;
  double first_order = 1.0;
};

struct SurvfitResult {
  std::string id;
  double last_time = 0.0;
  std::vector<SurvfitRow> rows;       // first row is u = last_time
  std::vector<std::string> warnings;
};

/// Pr(T >= u | T > t, y(s <= t)) on a grid of u > t.
SurvfitResult survfit_dynamic(const ModelStructure& s, const Draws& draws, const RawSubject& raw,
                              const SurvfitOptions& opt);

/// First-order estimate at the posterior means for one horizon u > t.
double conditional_survival_first_order(const ModelStructure& s, const Params& theta,
                                        const SubjectData& cond, double u);

struct PredictOptions {
  enum class Type { Marginal, Subject };
  enum class Interval { None, Confidence, Prediction };
  std::vector<double> times;            // empty: measurement times and a grid to last_time
  Type type = Type::Subject;
  Interval interval = Interval::Confidence;
  std::optional<double> last_time;
  int M = 200;
  std::uint64_t seed = 1;
  double level = 0.95;
};

struct PredictRow {
  double time = 0.0;
  double pred = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Predicted linear predictor (the modelled response scale; logit/probit
/// scale for binary families).
std::vector<PredictRow> predict_longitudinal(const ModelStructure& s, const Draws& draws,
                                             const RawSubject& raw, const PredictOptions& opt);

/// Laplace marginal log-likelihood of a subject's data up to `last_time`
/// at the posterior means.
double subject_marginal_loglik(const ModelStructure& s, const Draws& draws, const RawSubject& raw,
                               double last_time);

/// Posterior model weights proportional to prior * exp(loglik), computed in
/// log space. Empty prior means uniform.
std::vector<double> bma_weights(const std::vector<double>& loglik,
                                const std::vector<double>& prior = {});

/// Weighted average of every summary column of aligned survfit results.
SurvfitResult bma_combine(const std::vector<SurvfitResult>& results,
                          const std::vector<double>& weights);

}  // namespace jmx
