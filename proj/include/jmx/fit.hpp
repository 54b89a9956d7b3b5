#pragma once

// End-to-end fitting: data preparation, initializers, sampling and the
// fit statistics stored with a model.

#include <map>
#include <string>
#include <vector>

#include "jmx/mcmc.hpp"
#include "jmx/model.hpp"
#include "jmx/posterior.hpp"
#include "jmx/table.hpp"

namespace jmx {

struct PreparedData {
  ModelStructure structure;
  JointData data;
  std::vector<RawSubject> raw;
};

/// Compiles the spec, splits the tables into subjects and builds the
/// structure (knots, levels) from them.
PreparedData prepare(ModelSpec spec, const Table& long_table, const Table* surv_table);

/// Subjects of new data laid out against an existing structure. Event
/// columns are read when present and required only if `require_event`.
std::vector<RawSubject> subjects_for(const ModelStructure& s, const Table& long_table,
                                     const Table* surv_table, bool require_event);

struct FittedModel {
  std::string name;
  ModelStructure structure;
  Draws draws;
  FitStats stats;
  std::map<std::string, std::string> provenance;
  std::vector<std::string> notes;
  Params init_theta;
  std::map<std::string, Eigen::MatrixXd> proposal_cov;   // beta, gamma_alpha, h0
  DataFingerprint fingerprint;
  std::size_t n_subjects = 0;
  std::size_t n_events = 0;
  std::size_t n_obs = 0;
  double elapsed_seconds = 0.0;
};

struct FitOptions {
  bool laplace = true;   // marginal log-likelihood (one mode search per subject)
};

FittedModel fit_joint(const ModelSpec& spec, const Table& long_table, const Table* surv_table,
                      const FitOptions& opt = {});

/// Same, from already prepared data.
FittedModel fit_prepared(const PreparedData& prep, const FitOptions& opt = {});

}  // namespace jmx
