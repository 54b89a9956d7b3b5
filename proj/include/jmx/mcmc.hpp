#pragma once

// Posterior sampling: block random-walk Metropolis with adaptive scales, a
// slice update for the residual precision and Gibbs updates for D^{-1} and
// the baseline smoothing parameter.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmx/model.hpp"
#include "jmx/survival.hpp"

namespace jmx {

using Rng = std::mt19937_64;

struct Draws {
  Eigen::MatrixXd beta;        // K x p
  Eigen::VectorXd sigma2;      // K
  Eigen::MatrixXd D;           // K x q*q, column-major flattening
  Eigen::MatrixXd gamma;       // K x n_gamma
  Eigen::MatrixXd alpha;       // K x n_alpha
  Eigen::MatrixXd gammas_h0;   // K x Q
  Eigen::VectorXd tau_h;       // K
  Eigen::MatrixXd loglik;      // K x n, per-subject log-likelihood given the drawn b_i
  Eigen::MatrixXd b_mean;      // n x q
  Eigen::MatrixXd b_sd;        // n x q
  std::map<std::string, double> acceptance;  // post-adaptation acceptance per block
  std::vector<std::string> warnings;
  int thin = 1;

  Eigen::Index size() const { return beta.rows(); }
  Params at(Eigen::Index k) const;
  /// Component-wise posterior means (D averaged entry-wise).
  Params mean() const;
};

/// Starting values and proposal covariances from the two-stage initializers.
struct InitState {
  Params theta;
  Eigen::MatrixXd b;                     // n x q
  Eigen::MatrixXd beta_cov;              // conditional (given b) covariance from the mixed model
  std::vector<Eigen::MatrixXd> b_cov;    // per subject, from the mixed model
  Eigen::MatrixXd gamma_alpha_cov;       // inverse Cox information
  Eigen::MatrixXd h0_cov;                // from the penalized Newton fit
  Eigen::VectorXd shift;                 // hazard-weighted means of (w, features)
  std::map<std::string, std::string> provenance;
  std::vector<std::string> notes;
};

InitState initialize(const ModelStructure& s, const JointData& data);

/// Log of the joint prior of theta (normal, Wishart, inverse-gamma, Gamma and
/// the penalized baseline prior).
double log_prior(const ModelStructure& s, const Params& theta);

/// Full log posterior: long + event + random-effects densities + log prior.
/// Throws nonfinite-log-posterior naming the offending block.
double log_posterior(const ModelStructure& s, const Params& theta, const Eigen::MatrixXd& b,
                     const JointData& data);

/// Per-subject contribution log p(y_i|b_i) + log p(T_i, delta_i|b_i) + log p(b_i|D).
double subject_log_posterior(const ModelStructure& s, const Params& theta,
                             const RandomEffectsPrior& re, const Eigen::VectorXd& b,
                             const SubjectData& subj);

struct MHStep {
  Eigen::VectorXd value;
  double log_target = 0.0;
  bool accepted = false;
};

/// One random-walk Metropolis step with proposal N(current, scale^2 L L').
MHStep rw_metropolis_block(const Eigen::VectorXd& current, double current_log_target,
                           const std::function<double(const Eigen::VectorXd&)>& log_target,
                           const Eigen::MatrixXd& chol, double scale, Rng& rng);

/// One stepping-out / shrinkage slice update of sigma^2 on the log-precision
/// scale. `loglik` returns the longitudinal log-likelihood at a given sigma^2;
/// the prior is InverseGamma(a0, b0) on sigma^2.
double slice_update_precision(double sigma2, const std::function<double(double)>& loglik,
                              double a0, double b0, Rng& rng, double width = 1.0);

/// Draw of D^{-1} from Wishart(nu0 + n, (R0^{-1} + sum b_i b_i')^{-1}),
/// where the Wishart(nu, S) density has mean nu * S.
Eigen::MatrixXd gibbs_wishart_D(const Eigen::MatrixXd& b, double nu0, const Eigen::MatrixXd& R0,
                                Rng& rng);

/// Wishart(nu, S) draw by the Bartlett decomposition.
Eigen::MatrixXd wishart_draw(double nu, const Eigen::MatrixXd& S, Rng& rng);

/// Draw from Gamma(shape + rank/2, rate + g'Kg/2) (shape, rate).
double gibbs_tau_h(const Eigen::VectorXd& gammas_h0, const Eigen::MatrixXd& K, int rank,
                   double shape, double rate, Rng& rng);

/// Robbins-Monro update of a log proposal scale toward `target` acceptance.
double adapt_log_scale(double log_scale, double acceptance, double target, int batch_index);
inline double target_acceptance(Eigen::Index dim) { return dim >= 3 ? 0.234 : 0.44; }

Draws run_mcmc(const ModelStructure& s, const JointData& data, const InitState& init,
               const MCMCControl& control);

}  // namespace jmx
