#pragma once

// Data generator for the joint model: longitudinal responses from the
// mixed model, event times by inverting the subject survival function.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmx/config.hpp"
#include "jmx/model.hpp"
#include "jmx/table.hpp"

namespace jmx {

/// Baseline covariate generator.
struct CovariateGen {
  enum class Kind { Binary, Normal, Uniform };
  std::string name;
  Kind kind = Kind::Normal;
  double a = 0.0;   // Binary: Pr(second level); Normal: mean; Uniform: low
  double b = 1.0;   // Normal: sd; Uniform: high
  std::vector<std::string> levels{"0", "1"};
};

struct SimulationSpec {
  ModelSpec spec;
  Params truth;                   // gammas_h0 sized to `baseline_knots`
  KnotVector baseline_knots;
  std::size_t n = 300;
  std::vector<double> visits{0.0, 0.5, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  double visit_jitter = 0.0;      // uniform +- jitter on visits after the first
  double censor_rate = 0.0;       // exponential censoring; 0 disables it
  double admin_time = std::numeric_limits<double>::infinity();
  std::vector<CovariateGen> covariates;
};

struct SimulationResult {
  Table long_table;
  Table surv_table;
  Eigen::MatrixXd b;                  // n x q true random effects
  std::vector<double> event_times;    // uncensored T*, +inf when beyond admin_time
};

/// Solves S(t) = u for t by bisection to 1e-8. Returns +inf when S stays
/// above u up to `upper` (or up to 1e6 when `upper` is infinite).
double invert_survival(const std::function<double(double)>& survival, double u, double upper,
                       double tol = 1e-8);

/// Structure of the generating model (knots from the visit schedule).
ModelStructure simulation_structure(const SimulationSpec& sim);

SimulationResult simulate_joint(const SimulationSpec& sim, std::uint64_t seed);

/// Simulation file: a model configuration plus `sim.*` and `truth.*` keys.
///
///   sim.n: 300
///   sim.visits: 0, 0.5, 1, 2, 3, 4, 5
///   sim.visit_jitter: 0.1
///   sim.censor_rate: 0.05
///   sim.admin_time: 12
///   sim.covariate.drug: binary(0.5, placebo, D-penicil)
///   sim.covariate.age: normal(50, 10)
///   truth.beta: 0.5, 0.2
///   truth.sigma2: 0.09
///   truth.D: 1, 0; 0, 0.1
///   truth.gamma: 0.3
///   truth.alpha: 0.5
///   truth.gammas_h0: -3            (one value: constant baseline hazard)
SimulationSpec parse_simulation(const std::string& text, const std::string& source = "<simulation>");
SimulationSpec load_simulation(const std::string& path);

/// JSON record of the true parameters and random effects.
std::string truth_json(const SimulationSpec& sim, const SimulationResult& r);

}  // namespace jmx
