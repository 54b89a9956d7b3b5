#pragma once

// Shared fixtures: a small simulated data set and a cheap fit of it.

#include <string>

#include "jmx/artifact.hpp"
#include "jmx/config.hpp"
#include "jmx/fit.hpp"
#include "jmx/simulate.hpp"

namespace jmx::testing {

inline std::string small_simulation_text(int n = 80) {
  return "name: toy\n"
         "id: id\ntime: time\nresponse: y\nevent_time: Time\nevent: event\n"
         "fixed: time + group\nrandom: time\nsurvival: group\n"
         "family: gaussian\nassociation: td-value\n"
         "baseline_basis: 7\n"
         "mcmc.n_adapt: 300\nmcmc.n_burnin: 300\nmcmc.n_iter: 1500\nmcmc.n_keep: 300\n"
         "sim.n: " + std::to_string(n) + "\n"
         "sim.visits: 0, 0.5, 1, 2, 3, 4, 5, 6, 7, 8\n"
         "sim.censor_rate: 0.05\nsim.admin_time: 10\n"
         "sim.covariate.group: binary(0.5)\n"
         "truth.beta: 1, 0.3, -0.5\ntruth.sigma2: 0.25\n"
         "truth.D: 0.5, 0.05; 0.05, 0.05\n"
         "truth.gamma: 0.4\ntruth.alpha: 0.5\ntruth.gammas_h0: -3\n";
}

/// Structure of a simulation file with the given model lines and truth.
inline ModelStructure structure_of(const std::string& text) {
  return simulation_structure(parse_simulation(text, "<test>"));
}

inline RawSubject raw_subject(const std::string& id, std::vector<double> times, std::vector<double> y,
                              double T, int delta, Covariates cov = {}) {
  RawSubject r;
  r.id = id;
  r.covariates = cov;
  r.times = std::move(times);
  r.y_raw = std::move(y);
  r.censor.assign(r.times.size(), 0);
  r.row_cov.assign(r.times.size(), cov);
  r.T = T;
  r.delta = delta;
  return r;
}

/// Constant hazard exp(log_rate), value association with coefficient `alpha`.
inline std::string constant_hazard_text(double log_rate, double alpha = 0.0, double gamma = 0.0) {
  return "id: id\ntime: time\nresponse: y\nevent_time: Time\nevent: event\n"
         "fixed: 1\nrandom: 1\nsurvival: x\nfamily: gaussian\nassociation: td-value\n"
         "sim.n: 5000\nsim.visits: 0\nsim.covariate.x: normal(0, 1)\n"
         "truth.beta: 0\ntruth.sigma2: 1\ntruth.D: 1\n"
         "truth.gamma: " + format_number(gamma) + "\ntruth.alpha: " + format_number(alpha) +
         "\ntruth.gammas_h0: " + format_number(log_rate) + "\n";
}

/// Gaussian model whose event part does not involve beta: alpha fixed at
/// zero, no covariates, known sigma2 and D. The posterior of beta is then
/// normal with the generalized-least-squares form below.
inline std::string conjugate_text(int n, int n_iter, int n_keep) {
  return "name: conjugate\nid: id\ntime: time\nresponse: y\nevent_time: Time\nevent: event\n"
         "fixed: time\nrandom: 1\nfamily: gaussian\nassociation: td-value\n"
         "baseline_basis: 5\n"
         "fix.alpha: 0\nfix.sigma2: 0.25\nfix.D: 0.5\n"
         "mcmc.n_adapt: 500\nmcmc.n_burnin: 500\nmcmc.n_iter: " + std::to_string(n_iter) +
         "\nmcmc.n_keep: " + std::to_string(n_keep) + "\n"
         "sim.n: " + std::to_string(n) + "\nsim.visits: 0, 1, 2, 3, 4\nsim.admin_time: 6\n"
         "truth.beta: 1, -0.3\ntruth.sigma2: 0.25\ntruth.D: 0.5\n"
         "truth.alpha: 0\ntruth.gammas_h0: -2\n";
}

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Posterior of beta with prior N(0, v0 I), marginal over the random effects.
inline GaussianPosterior conjugate_beta_posterior(const JointData& data, double sigma2,
                                                  const Eigen::MatrixXd& D, double v0) {
  const Eigen::Index p = data.subjects.front().longit.X.cols();
  Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(p, p) / v0;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (const auto& sd : data.subjects) {
    const auto& blk = sd.longit;
    const Eigen::MatrixXd V =
        sigma2 * Eigen::MatrixXd::Identity(blk.y.size(), blk.y.size()) + blk.Z * D * blk.Z.transpose();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
    prec += blk.X.transpose() * ldlt.solve(blk.X);
    rhs += blk.X.transpose() * ldlt.solve(blk.y);
  }
  GaussianPosterior g;
  g.cov = prec.inverse();
  g.mean = g.cov * rhs;
  return g;
}

struct ToyFit {
  SimulationSpec sim;
  SimulationResult data;
  Artifact artifact;
};

/// Fitted once per process.
inline const ToyFit& toy_fit() {
  static const ToyFit fit = [] {
    ToyFit f;
    const std::string text = small_simulation_text();
    f.sim = parse_simulation(text, "<toy>");
    f.data = simulate_joint(f.sim, 11);
    f.artifact.config = parse_config(text, "<toy>");
    f.artifact.model = fit_joint(f.artifact.config.spec, f.data.long_table, &f.data.surv_table);
    f.artifact.model.name = "toy";
    return f;
  }();
  return fit;
}

}  // namespace jmx::testing
