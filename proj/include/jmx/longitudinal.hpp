#pragma once

// Longitudinal submodel: response families, linear predictor and the
// mixed-model fits used to initialize the sampler.

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jmx {

struct Family {
  enum class Kind { Gaussian, StudentT, BinomialLogit, BinomialProbit, CensoredGaussian };
  Kind kind = Kind::Gaussian;
  int df = 4;                  // StudentT only
  std::string censor_column;   // CensoredGaussian only

  bool scale_needed() const {
    return kind != Kind::BinomialLogit && kind != Kind::BinomialProbit;
  }
  bool binary() const { return !scale_needed(); }

  /// "gaussian", "student-t(4)", "binomial-logit", "binomial-probit",
  /// "censored-gaussian(CensInd)".
  static Family parse(const std::string& text);
  std::string name() const;
};

/// Log density (or log mass) of one response. `censor` is the 0/1 indicator
/// for the censored family and ignored otherwise; `scale` is the residual
/// standard deviation (location/scale for Student-t).
double log_density_long(double y, double eta, double scale, const Family& family,
                        int censor = 0);

inline double linear_predictor(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                               const Eigen::Ref<const Eigen::RowVectorXd>& z,
                               const Eigen::Ref<const Eigen::VectorXd>& beta,
                               const Eigen::Ref<const Eigen::VectorXd>& b) {
  return x.dot(beta) + z.dot(b);
}

/// Per-subject response, design and (optional) censoring indicators.
struct LongitudinalBlock {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  std::vector<int> censor;
};

struct MixedFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_cov;        // covariance of beta-hat (marginal GLS form)
  Eigen::MatrixXd D;
  double sigma2 = 1.0;
  Eigen::MatrixXd b;               // n x q empirical-Bayes means
  std::vector<Eigen::MatrixXd> b_cov;  // per-subject conditional covariances
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool monotone = true;
  bool separation = false;         // binary fits: penalized fallback used
  std::vector<double> loglik_trace;
};

/// Maximum likelihood for the linear mixed model by EM. Stops when the
/// relative log-likelihood change drops below `tol` or after `max_iter`
/// iterations. `b` holds the E-step at the returned parameters.
MixedFit fit_lmm_init(const std::vector<LongitudinalBlock>& data, int max_iter = 500,
                      double tol = 1e-8);

/// Penalized quasi-likelihood for binary responses (working-response
/// weighted mixed model). Falls back to a ridge-penalized update when the
/// fit drifts toward separation.
MixedFit fit_glmm_init(const std::vector<LongitudinalBlock>& data, const Family& family,
                       int max_outer = 30);

}  // namespace jmx
