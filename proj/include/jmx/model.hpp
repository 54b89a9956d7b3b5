#pragma once

// Model specification, the data-independent model structure, parameter
// state and per-subject precomputed designs.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmx/basis.hpp"
#include "jmx/longitudinal.hpp"
#include "jmx/table.hpp"
#include "jmx/terms.hpp"

namespace jmx {

// ---------------------------------------------------------------------------
// Association structure

enum class AssociationKind { TDValue, TDExtra, TDBoth, SharedRE, SharedBetasRE };

AssociationKind parse_association(const std::string& text);
std::string association_name(AssociationKind kind);

/// One transformed copy of the value or extra term: identity, x^k, or x
/// times the indicator (or numeric value) of a covariate.
struct Feature {
  enum class Kind { Identity, Power, InteractWith };
  Kind kind = Kind::Identity;
  int power = 1;
  std::string covariate;
  std::string level;

  /// Suffix appended to Assoct / AssoctE: "", ":^2", ":D-penicil".
  std::string suffix() const;
  std::string str() const;
};
using FeatureList = std::vector<Feature>;

/// "identity, pow2, interact(drug,D-penicil)".
FeatureList parse_features(const std::string& text);
std::string features_str(const FeatureList& f);

struct ExtraForm {
  TermList fixed;
  TermList random;
  std::vector<int> ind_fixed;   // 1-based positions into beta
  std::vector<int> ind_random;  // 1-based positions into b
};

struct AssociationSpec {
  AssociationKind kind = AssociationKind::TDValue;
  std::optional<ExtraForm> extra;
  FeatureList transform_value{Feature{}};
  FeatureList transform_extra{Feature{}};

  bool uses_value() const {
    return kind == AssociationKind::TDValue || kind == AssociationKind::TDBoth;
  }
  bool uses_extra() const {
    return kind == AssociationKind::TDExtra || kind == AssociationKind::TDBoth;
  }
  bool shared() const {
    return kind == AssociationKind::SharedRE || kind == AssociationKind::SharedBetasRE;
  }
};

/// Multiplier and power of one feature, resolved against a subject's covariates.
struct FeatureTerm {
  double multiplier = 1.0;
  int power = 1;
};

std::vector<FeatureTerm> resolve_features(const FeatureList& list, const Covariates& cov);

// ---------------------------------------------------------------------------
// Specification

/// Transformation applied to the raw response column.
struct ResponseSpec {
  enum class Kind { Identity, Log, Above };
  Kind kind = Kind::Identity;
  std::string column;
  double threshold = 0.0;

  /// "serBilir", "log(serBilir)", "serBilir > 1.8".
  static ResponseSpec parse(const std::string& text);
  std::string str() const;
  double apply(double raw) const;
};

struct PriorSpec {
  double v0 = 100.0;        // variance of the normal priors on beta, gamma, alpha
  double v0_h0 = 100.0;     // unpenalized baseline coefficients
  double nu0 = -1.0;        // Wishart df for D^{-1}; <= 0 means q + 1
  double R0 = 100.0;        // Wishart scale matrix R0 * I
  double a0 = 0.01;         // inverse-gamma shape for sigma^2
  double b0 = 0.01;         // inverse-gamma rate for sigma^2
  double tau_shape = 1.0;   // Gamma prior of the smoothing parameter
  double tau_rate = 0.005;
};

struct MCMCControl {
  int n_adapt = 3000;
  int n_batch = 100;
  int n_burnin = 3000;
  int n_iter = 20000;
  int n_keep = 2000;
  std::uint64_t seed = 1;
  bool shift_move = true;   // joint (beta, b) location move
};

/// Parameters held at fixed values during sampling.
struct FixedParams {
  std::optional<Eigen::MatrixXd> D;
  std::optional<double> sigma2;
  std::optional<Eigen::VectorXd> alpha;
  std::optional<Eigen::VectorXd> gamma;
};

struct ModelSpec {
  std::string id_col = "id";
  std::string time_col = "year";
  ResponseSpec response;
  std::string event_time_col = "years";
  std::string event_col = "status2";

  std::string fixed_text = "1";
  std::string random_text = "1";
  std::string survival_text = "";
  TermList fixed;
  TermList random;
  TermList survival;   // never has an intercept

  Family family;
  AssociationSpec association;

  bool penalized = true;
  int baseline_basis = 17;
  int baseline_degree = 3;
  int penalty_order = 2;
  std::string quadrature = "gk15";
  int quadrature_panels = 1;

  std::map<std::string, std::vector<std::string>> levels;
  PriorSpec prior;
  MCMCControl control;
  FixedParams fixed_params;

  /// Parses the term expressions held in *_text into the TermLists.
  void compile();
};

// ---------------------------------------------------------------------------
// Structure: everything needed to evaluate the model away from its data.

struct ModelStructure {
  ModelSpec spec;
  DesignContext ctx;
  KnotVector baseline_knots;
  QuadratureRule rule;

  std::vector<std::string> fixed_names;
  std::vector<std::string> random_names;
  std::vector<std::string> surv_names;
  std::vector<std::string> alpha_names;
  std::vector<std::string> extra_fixed_names;
  std::vector<std::string> extra_random_names;

  std::vector<int> ind_fixed;        // 0-based
  std::vector<int> ind_random;       // 0-based
  std::vector<int> random_to_fixed;  // fixed column of each random column, or -1

  std::size_t n_value_features = 0;
  std::size_t n_extra_features = 0;

  double time_min = 0.0;   // smallest observed event/censoring time
  double time_q90 = 0.0;   // 0.9 quantile of observed times
  double time_max = 0.0;

  Eigen::Index p() const { return static_cast<Eigen::Index>(fixed_names.size()); }
  Eigen::Index q() const { return static_cast<Eigen::Index>(random_names.size()); }
  Eigen::Index n_gamma() const { return static_cast<Eigen::Index>(surv_names.size()); }
  Eigen::Index n_alpha() const { return static_cast<Eigen::Index>(alpha_names.size()); }
  Eigen::Index n_h0() const { return baseline_knots.size(); }
};

/// Builds knots, factor levels and column layouts from training data.
/// `long_times` are the longitudinal time values; `obs_times` and `events`
/// the observed times and event indicators of the subjects.
ModelStructure make_structure(const ModelSpec& spec, const std::vector<double>& long_times,
                              const std::vector<double>& obs_times, const std::vector<int>& events,
                              const std::map<std::string, std::vector<std::string>>& levels);

/// Rebuilds a structure from stored knots, levels and time summaries.
ModelStructure restore_structure(const ModelSpec& spec, const DesignContext& ctx,
                                 const KnotVector& baseline_knots, double time_min,
                                 double time_q90, double time_max);

// ---------------------------------------------------------------------------
// Parameters

struct Params {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  Eigen::MatrixXd D;
  Eigen::VectorXd gamma;
  Eigen::VectorXd alpha;
  Eigen::VectorXd gammas_h0;
  double tau_h = 1.0;
};

/// Cached quantities of D used by the random-effects density.
struct RandomEffectsPrior {
  Eigen::MatrixXd D_inv;
  double log_det = 0.0;
  bool valid = false;

  static RandomEffectsPrior from(const Eigen::MatrixXd& D);
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& b) const;
};

// ---------------------------------------------------------------------------
// Per-subject designs

/// Hazard-related designs at a set of time points (quadrature nodes or a
/// single time). Extra-term designs are scattered to full beta/b widths.
struct HazardDesign {
  Eigen::VectorXd t;
  Eigen::VectorXd weight;
  Eigen::MatrixXd X, Z;
  Eigen::MatrixXd Xe, Ze;
  Eigen::MatrixXd Bs;

  Eigen::Index size() const { return t.size(); }
};

/// Constant-in-time hazard inputs of a subject.
struct SubjectHazard {
  Eigen::VectorXd w;
  std::vector<FeatureTerm> value_terms;
  std::vector<FeatureTerm> extra_terms;
};

struct SubjectData {
  std::string id;
  Covariates covariates;
  std::vector<double> times;     // measurement times
  LongitudinalBlock longit;
  double T = 0.0;
  int delta = 0;
  SubjectHazard hazard;
  HazardDesign nodes;            // quadrature over [0, T]
  HazardDesign at_T;             // single row at T
};

struct DataFingerprint {
  std::size_t long_rows = 0;
  std::size_t subjects = 0;
  std::vector<std::string> long_columns;
  std::vector<std::string> surv_columns;
  std::string hash;

  bool operator==(const DataFingerprint& o) const {
    return long_rows == o.long_rows && subjects == o.subjects && hash == o.hash;
  }
};

struct JointData {
  std::vector<SubjectData> subjects;
  DataFingerprint fingerprint;
  std::size_t n_events = 0;
  std::size_t n_obs = 0;
};

/// Rule nodes and weights on [a, b] split into the structure's panel count.
HazardDesign make_hazard_design(const ModelStructure& s, const Covariates& cov,
                                const Eigen::VectorXd& t, const Eigen::VectorXd& weight);
HazardDesign make_interval_design(const ModelStructure& s, const Covariates& cov, double a,
                                  double b);
SubjectHazard make_subject_hazard(const ModelStructure& s, const Covariates& cov);

/// Longitudinal block for a subject from raw measurement rows.
LongitudinalBlock make_longitudinal_block(const ModelStructure& s,
                                          const std::vector<double>& times,
                                          const std::vector<double>& y,
                                          const std::vector<Covariates>& row_cov,
                                          const std::vector<int>& censor);

/// Splits long and surv tables into subjects. The surv table may be null,
/// in which case event columns are read from the first long row of each
/// subject. Throws on unmatched, duplicated or out-of-order subjects.
struct RawSubject {
  std::string id;
  Covariates covariates;
  std::vector<double> times;
  std::vector<double> y_raw;
  std::vector<int> censor;
  std::vector<Covariates> row_cov;
  double T = 0.0;
  int delta = 0;
};
std::vector<RawSubject> split_subjects(const ModelSpec& spec, const Table& long_table,
                                       const Table* surv_table, bool require_event = true);

/// Factor levels observed in the tables for non-numeric covariates.
std::map<std::string, std::vector<std::string>> observed_levels(const ModelSpec& spec,
                                                                const Table& long_table,
                                                                const Table* surv_table);

DataFingerprint fingerprint(const Table& long_table, const Table* surv_table);

JointData prepare_data(const ModelStructure& s, const std::vector<RawSubject>& raw,
                       const DataFingerprint& fp);

}  // namespace jmx
