#pragma once

// Relative-risk submodel: baseline hazard, association features, hazard,
// survival and event densities, and the two-stage initializers.

#include <vector>

#include <Eigen/Dense>

#include "jmx/longitudinal.hpp"
#include "jmx/model.hpp"

namespace jmx {

struct BaselineHazard {
  Eigen::VectorXd gammas_h0;
  KnotVector knots;
  bool penalized = true;
  double tau_h = 1.0;
  int penalty_order = 2;
};

/// B-spline expansion of log h0(t); the coefficient vector absorbs the intercept.
double log_baseline_hazard(double t, const BaselineHazard& bh);

/// K = D_r' D_r for the r-th order difference operator on Q coefficients.
Eigen::MatrixXd difference_penalty(int Q, int order);
int penalty_rank(int Q, int order);

/// Association features (the vectors multiplying alpha) at every row of `d`.
/// Returns rows x n_alpha.
Eigen::MatrixXd association_features(const ModelStructure& s, const HazardDesign& d,
                                     const SubjectHazard& h, const Eigen::VectorXd& beta,
                                     const Eigen::VectorXd& b);

/// log h(t) at every row of `d`.
Eigen::VectorXd log_hazard(const ModelStructure& s, const HazardDesign& d,
                           const SubjectHazard& h, const Params& theta,
                           const Eigen::VectorXd& b);

/// Quadrature sum of exp(log h) over the rows of `d`. May return inf/NaN.
double cumulative_hazard(const ModelStructure& s, const HazardDesign& d, const SubjectHazard& h,
                         const Params& theta, const Eigen::VectorXd& b);

/// S(t) = exp(-int_0^t h). Throws nonfinite-hazard naming t on overflow.
double survival_function(const ModelStructure& s, const Covariates& cov, const Params& theta,
                         const Eigen::VectorXd& b, double t);

/// delta log h(T) - H(T). Returns -inf (never throws) on overflow so that
/// samplers can reject.
double log_density_event(const ModelStructure& s, const SubjectData& subj, const Params& theta,
                         const Eigen::VectorXd& b);

/// Sum of log densities of a subject's longitudinal responses.
double log_density_long_subject(const ModelStructure& s, const LongitudinalBlock& blk,
                                const Params& theta, const Eigen::VectorXd& b);

// ---------------------------------------------------------------------------
// Initializers

/// One start-stop row of the counting-process expansion.
struct CoxRow {
  double start = 0.0;
  double stop = 0.0;
  int event = 0;
  Eigen::RowVectorXd x;
};

struct CoxFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool monotone = false;          // some coefficient diverges
  bool fallback = false;          // zero init with identity-scaled proposal
  std::vector<int> dropped;       // all-zero columns
};

/// Newton-Raphson on the Cox partial likelihood (Breslow ties).
CoxFit fit_cox(const std::vector<CoxRow>& rows, int max_iter = 50);

/// Start-stop expansion at each subject's measurement times with
/// last-value-carried-forward association features from (beta, b_i).
std::vector<CoxRow> expand_start_stop(const ModelStructure& s, const JointData& data,
                                      const Eigen::VectorXd& beta, const Eigen::MatrixXd& b);

/// Cox fit with the longitudinal estimates entering as time-dependent covariates.
CoxFit fit_cox_init(const ModelStructure& s, const JointData& data, const Eigen::VectorXd& beta,
                    const Eigen::MatrixXd& b);

struct BaselineInit {
  Eigen::VectorXd gammas_h0;
  Eigen::VectorXd gamma;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd h0_cov;       // conditional covariance of the baseline block
  Eigen::VectorXd shift;        // hazard-weighted means of (w, features)
  double tau_h = 100.0;
  int iterations = 0;
  bool converged = false;
};

/// Penalized Newton fit of (gammas_h0, gamma, alpha) with the longitudinal
/// estimates held fixed, starting from the Cox estimates.
BaselineInit fit_baseline_init(const ModelStructure& s, const JointData& data,
                               const Eigen::VectorXd& beta, const Eigen::MatrixXd& b,
                               const CoxFit& cox, double tau_init = 100.0);

}  // namespace jmx
