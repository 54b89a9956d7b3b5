#pragma once

// Posterior summaries, model-comparison statistics and sampler diagnostics.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmx/mcmc.hpp"
#include "jmx/model.hpp"

namespace jmx {

/// Named columns of every sampled scalar: beta, sigma, D (lower triangle),
/// gamma, alpha, tauBs and the baseline coefficients.
struct DrawTable {
  std::vector<std::string> names;
  std::vector<std::string> groups;   // "longitudinal", "random-effects", "event", "baseline"
  Eigen::MatrixXd values;            // K x P
};

DrawTable draw_table(const ModelStructure& s, const Draws& draws);

struct ParamSummary {
  std::string name;
  std::string group;
  double mean = 0.0;
  double sd = 0.0;
  double std_err = 0.0;   // sd / sqrt(ess)
  double ess = 0.0;
  double lower = 0.0;     // 2.5%
  double upper = 0.0;     // 97.5%
  double p_value = 1.0;   // 2 * min tail probability of zero
};

/// Effective sample size from the spectral density at zero of an AR model
/// fitted by Yule-Walker, order chosen by AIC (at most 20).
double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& x);

std::vector<ParamSummary> summarize(const ModelStructure& s, const Draws& draws,
                                    double level = 0.95);

struct FitStats {
  double dic = 0.0;
  double pD = 0.0;
  double lpml = 0.0;
  double deviance_mean = 0.0;
  double deviance_at_mean = 0.0;
  double marginal_loglik = 0.0;   // Laplace; NaN when not computed
};

/// Conditional DIC: Dbar from the stored per-draw log-likelihoods and
/// D(theta-bar, b-bar) at the posterior means.
void dic(const ModelStructure& s, const JointData& data, const Draws& draws, FitStats& out);

/// Sum over subjects of log CPO_i = -log mean_k exp(-loglik_ik).
double lpml(const Eigen::MatrixXd& loglik);

/// Two-step Laplace approximation of the marginal log-likelihood: subject
/// integrals over b at the posterior means, then a Gaussian approximation
/// of the posterior of theta in unconstrained coordinates.
double marginal_loglik_laplace(const ModelStructure& s, const JointData& data,
                               const Draws& draws);

FitStats fit_stats(const ModelStructure& s, const JointData& data, const Draws& draws,
                   bool laplace = true);

struct FittedRow {
  std::string id;
  double time = 0.0;
  double observed = 0.0;
  double fitted = 0.0;
  double residual = 0.0;
  double standardized = 0.0;
};

/// Fitted values at the posterior means; `subject` adds the posterior mean
/// of each b_i.
std::vector<FittedRow> fitted_and_residuals(const ModelStructure& s, const JointData& data,
                                            const Draws& draws, bool subject);

/// delta_i minus the cumulative hazard at T_i, at the posterior means.
std::vector<double> martingale_residuals(const ModelStructure& s, const JointData& data,
                                         const Draws& draws);

struct ModelComparison {
  std::string name;
  FitStats stats;
  DataFingerprint fingerprint;
};

/// Table of DIC, pD and LPML sorted by DIC. Throws fingerprint-mismatch
/// when the models were fitted to different data.
std::string compare_models(std::vector<ModelComparison> models);

struct ParameterDiagnostics {
  std::string name;
  std::vector<double> trace;
  std::vector<double> autocorrelation;   // lags 0..40
  std::vector<double> density_x;
  std::vector<double> density_y;         // Gaussian KDE, Silverman bandwidth
  double ess = 0.0;
};

std::vector<double> autocorrelation(const Eigen::Ref<const Eigen::VectorXd>& x, int max_lag);

void gaussian_kde(const Eigen::Ref<const Eigen::VectorXd>& x, int points, std::vector<double>& grid,
                  std::vector<double>& density);

/// Per-parameter trace, autocorrelation and density; `names` filters when non-empty.
std::vector<ParameterDiagnostics> diagnostics_export(const ModelStructure& s, const Draws& draws,
                                                     const std::vector<std::string>& names = {});

}  // namespace jmx
