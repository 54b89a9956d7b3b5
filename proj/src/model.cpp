#include "jmx/model.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "jmx/error.hpp"
#include "jmx/numeric.hpp"

namespace jmx {

namespace {

std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

AssociationKind parse_association(const std::string& text) {
  const std::string s = lower(strip(text));
  if (s == "td-value") return AssociationKind::TDValue;
  if (s == "td-extra") return AssociationKind::TDExtra;
  if (s == "td-both") return AssociationKind::TDBoth;
  if (s == "shared-re") return AssociationKind::SharedRE;
  if (s == "shared-betas-re" || s == "shared-betasre") return AssociationKind::SharedBetasRE;
  throw Error(ErrorCode::InvalidSpec, "unknown association '" + text + "'");
}

std::string association_name(AssociationKind kind) {
  switch (kind) {
    case AssociationKind::TDValue: return "td-value";
    case AssociationKind::TDExtra: return "td-extra";
    case AssociationKind::TDBoth: return "td-both";
    case AssociationKind::SharedRE: return "shared-re";
    case AssociationKind::SharedBetasRE: return "shared-betas-re";
  }
  return "td-value";
}

std::string Feature::suffix() const {
  switch (kind) {
    case Kind::Identity: return "";
    case Kind::Power: return ":^" + std::to_string(power);
    case Kind::InteractWith: return ":" + (level.empty() ? covariate : level);
  }
  return "";
}

std::string Feature::str() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::Power: return "pow" + std::to_string(power);
    case Kind::InteractWith:
      return "interact(" + covariate + (level.empty() ? "" : "," + level) + ")";
  }
  return "identity";
}

FeatureList parse_features(const std::string& text) {
  FeatureList out;
  std::vector<std::string> items;
  int depth = 0;
  std::string cur;
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      items.push_back(strip(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  items.push_back(strip(cur));
  int identities = 0;
  for (const auto& it : items) {
    if (it.empty()) throw Error(ErrorCode::InvalidSpec, "empty transform feature");
    Feature f;
    const std::string l = lower(it);
    if (l == "identity" || l == "x") {
      f.kind = Feature::Kind::Identity;
      ++identities;
    } else if (l.rfind("pow", 0) == 0 || l.rfind("^", 0) == 0) {
      std::string digits = l.substr(l[0] == '^' ? 1 : 3);
      if (!digits.empty() && digits.front() == '(' && digits.back() == ')')
        digits = digits.substr(1, digits.size() - 2);
      double k = 0;
      if (!parse_number(digits, k) || k < 2 || k != static_cast<int>(k))
        throw Error(ErrorCode::InvalidSpec, "power feature needs an integer >= 2: '" + it + "'");
      f.kind = Feature::Kind::Power;
      f.power = static_cast<int>(k);
    } else if (l.rfind("interact(", 0) == 0 && it.back() == ')') {
      const std::string inner = it.substr(9, it.size() - 10);
      const auto comma = inner.find(',');
      f.kind = Feature::Kind::InteractWith;
      f.covariate = strip(inner.substr(0, comma));
      if (comma != std::string::npos) f.level = strip(inner.substr(comma + 1));
      if (f.covariate.empty()) throw Error(ErrorCode::InvalidSpec, "interact() needs a covariate");
    } else {
      throw Error(ErrorCode::InvalidSpec, "unknown transform feature '" + it + "'");
    }
    out.push_back(f);
  }
  if (identities > 1) throw Error(ErrorCode::InvalidSpec, "identity listed more than once");
  return out;
}

std::string features_str(const FeatureList& f) {
  std::string s;
  for (std::size_t k = 0; k < f.size(); ++k) s += (k ? ", " : "") + f[k].str();
  return s;
}

std::vector<FeatureTerm> resolve_features(const FeatureList& list, const Covariates& cov) {
  std::vector<FeatureTerm> out;
  out.reserve(list.size());
  for (const auto& f : list) {
    FeatureTerm t;
    if (f.kind == Feature::Kind::Power) t.power = f.power;
    if (f.kind == Feature::Kind::InteractWith) {
      auto it = cov.find(f.covariate);
      if (it == cov.end())
        throw Error(ErrorCode::MissingColumn,
                    "transform feature references unknown covariate '" + f.covariate + "'");
      if (f.level.empty()) {
        double v = 0;
        if (!parse_number(it->second, v))
          throw Error(ErrorCode::BadValue, "covariate '" + f.covariate + "' is not numeric");
        t.multiplier = v;
      } else {
        t.multiplier = it->second == f.level ? 1.0 : 0.0;
      }
    }
    out.push_back(t);
  }
  return out;
}

ResponseSpec ResponseSpec::parse(const std::string& text) {
  ResponseSpec r;
  const std::string s = strip(text);
  if (s.empty()) throw Error(ErrorCode::InvalidSpec, "empty response expression");
  if (s.rfind("log(", 0) == 0 && s.back() == ')') {
    r.kind = Kind::Log;
    r.column = strip(s.substr(4, s.size() - 5));
  } else if (auto gt = s.find('>'); gt != std::string::npos) {
    r.kind = Kind::Above;
    r.column = strip(s.substr(0, gt));
    if (!parse_number(strip(s.substr(gt + 1)), r.threshold))
      throw Error(ErrorCode::InvalidSpec, "bad threshold in response '" + text + "'");
  } else {
    r.kind = Kind::Identity;
    r.column = s;
  }
  if (r.column.empty()) throw Error(ErrorCode::InvalidSpec, "bad response '" + text + "'");
  return r;
}

std::string ResponseSpec::str() const {
  switch (kind) {
    case Kind::Identity: return column;
    case Kind::Log: return "log(" + column + ")";
    case Kind::Above: return column + " > " + format_number(threshold);
  }
  return column;
}

double ResponseSpec::apply(double raw) const {
  switch (kind) {
    case Kind::Identity: return raw;
    case Kind::Log:
      if (!(raw > 0))
        throw Error(ErrorCode::BadValue, "log response needs positive values in '" + column + "'");
      return std::log(raw);
    case Kind::Above: return raw > threshold ? 1.0 : 0.0;
  }
  return raw;
}

void ModelSpec::compile() {
  fixed = TermList::parse(fixed_text, time_col, true);
  random = TermList::parse(random_text, time_col, true);
  survival = TermList::parse(survival_text, time_col, false);
  survival.intercept = false;
  for (const auto& t : survival.terms)
    if (t.kind != Term::Kind::Covariate && !(t.kind == Term::Kind::Interaction))
      throw Error(ErrorCode::InvalidSpec, "survival formula takes baseline covariates only");
  if (association.uses_extra() && !association.extra)
    throw Error(ErrorCode::InvalidSpec, association_name(association.kind) +
                                            " needs extra_fixed/extra_random terms");
  if (fixed.empty()) throw Error(ErrorCode::InvalidSpec, "fixed formula has no columns");
  if (association.transform_value.empty() || association.transform_extra.empty())
    throw Error(ErrorCode::InvalidSpec, "transform lists must be nonempty");
  if (quadrature_panels < 1) throw Error(ErrorCode::InvalidSpec, "quadrature_panels must be >= 1");
}

namespace {

// Column names, index maps and association labels implied by spec and ctx.
void derive_layout(ModelStructure& s) {
  const auto& as = s.spec.association;
  s.fixed_names = column_names(s.spec.fixed, s.ctx);
  s.random_names = column_names(s.spec.random, s.ctx);
  s.surv_names = column_names(s.spec.survival, s.ctx);
  s.rule = quadrature_from_name(s.spec.quadrature);

  if (as.uses_extra()) {
    s.extra_fixed_names = column_names(as.extra->fixed, s.ctx);
    s.extra_random_names = column_names(as.extra->random, s.ctx);
    for (int k : as.extra->ind_fixed) {
      if (k < 1 || k > static_cast<int>(s.fixed_names.size()))
        throw Error(ErrorCode::InvalidSpec, "extra_ind_fixed out of range");
      s.ind_fixed.push_back(k - 1);
    }
    for (int k : as.extra->ind_random) {
      if (k < 1 || k > static_cast<int>(s.random_names.size()))
        throw Error(ErrorCode::InvalidSpec, "extra_ind_random out of range");
      s.ind_random.push_back(k - 1);
    }
    if (s.ind_fixed.size() != s.extra_fixed_names.size())
      throw Error(ErrorCode::InvalidSpec, "extra_ind_fixed must index one coefficient per extra fixed column");
    if (s.ind_random.size() != s.extra_random_names.size())
      throw Error(ErrorCode::InvalidSpec, "extra_ind_random must index one random effect per extra random column");
  }
  for (const auto& rn : s.random_names) {
    auto it = std::find(s.fixed_names.begin(), s.fixed_names.end(), rn);
    s.random_to_fixed.push_back(it == s.fixed_names.end()
                                    ? -1
                                    : static_cast<int>(it - s.fixed_names.begin()));
  }

  if (as.shared()) {
    for (const auto& rn : s.random_names) s.alpha_names.push_back("Assoct:" + rn);
  } else {
    if (as.uses_value()) {
      s.n_value_features = as.transform_value.size();
      for (const auto& f : as.transform_value) s.alpha_names.push_back("Assoct" + f.suffix());
    }
    if (as.uses_extra()) {
      s.n_extra_features = as.transform_extra.size();
      for (const auto& f : as.transform_extra) s.alpha_names.push_back("AssoctE" + f.suffix());
    }
  }
}

}  // namespace

ModelStructure restore_structure(const ModelSpec& spec, const DesignContext& ctx,
                                 const KnotVector& baseline_knots, double time_min,
                                 double time_q90, double time_max) {
  ModelStructure s;
  s.spec = spec;
  s.ctx = ctx;
  derive_layout(s);
  s.baseline_knots = baseline_knots;
  s.time_min = time_min;
  s.time_q90 = time_q90;
  s.time_max = time_max;
  return s;
}

ModelStructure make_structure(const ModelSpec& spec, const std::vector<double>& long_times,
                              const std::vector<double>& obs_times, const std::vector<int>& events,
                              const std::map<std::string, std::vector<std::string>>& levels) {
  ModelStructure s;
  s.spec = spec;
  const auto& as = spec.association;
  std::vector<const TermList*> lists{&spec.fixed, &spec.random, &spec.survival};
  if (as.extra) {
    lists.push_back(&as.extra->fixed);
    lists.push_back(&as.extra->random);
  }
  s.ctx = make_design_context(spec.time_col, lists, long_times, levels, spec.levels);
  derive_layout(s);

  if (obs_times.empty() || obs_times.size() != events.size())
    throw Error(ErrorCode::EmptyTable, "no subjects for the survival submodel");
  std::vector<double> ev;
  for (std::size_t i = 0; i < obs_times.size(); ++i)
    if (events[i]) ev.push_back(obs_times[i]);
  const double tmax = *std::max_element(obs_times.begin(), obs_times.end());
  const int n_basis = spec.penalized || spec.baseline_basis > 0 ? spec.baseline_basis : 9;
  try {
    s.baseline_knots = percentile_knots(ev, n_basis, spec.baseline_degree, tmax * (1 + 1e-8));
  } catch (const Error&) {
    // too few distinct event times: spread the knots over all observed times
    s.baseline_knots = percentile_knots(obs_times, n_basis, spec.baseline_degree, tmax * (1 + 1e-8));
  }
  s.time_min = *std::min_element(obs_times.begin(), obs_times.end());
  s.time_q90 = quantile(obs_times, 0.9);
  s.time_max = tmax;
  return s;
}

RandomEffectsPrior RandomEffectsPrior::from(const Eigen::MatrixXd& D) {
  RandomEffectsPrior r;
  const Eigen::Index q = D.rows();
  if (q == 0) {
    r.valid = true;
    return r;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success) return r;
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if ((diag.array() <= 0).any()) return r;
  r.D_inv = llt.solve(Eigen::MatrixXd::Identity(q, q));
  r.log_det = 2.0 * diag.array().log().sum();
  r.valid = std::isfinite(r.log_det);
  return r;
}

double RandomEffectsPrior::log_density(const Eigen::Ref<const Eigen::VectorXd>& b) const {
  const Eigen::Index q = b.size();
  if (q == 0) return 0.0;
  return -0.5 * q * kLog2Pi - 0.5 * log_det - 0.5 * b.dot(D_inv * b);
}

SubjectHazard make_subject_hazard(const ModelStructure& s, const Covariates& cov) {
  SubjectHazard h;
  h.w = s.spec.survival.empty() ? Eigen::VectorXd()
                                : Eigen::VectorXd(design_row(s.spec.survival, s.ctx, 0.0, cov).transpose());
  const auto& as = s.spec.association;
  if (as.uses_value()) h.value_terms = resolve_features(as.transform_value, cov);
  if (as.uses_extra()) h.extra_terms = resolve_features(as.transform_extra, cov);
  return h;
}

HazardDesign make_hazard_design(const ModelStructure& s, const Covariates& cov,
                                const Eigen::VectorXd& t, const Eigen::VectorXd& weight) {
  HazardDesign d;
  d.t = t;
  d.weight = weight;
  const Eigen::Index m = t.size();
  const auto& as = s.spec.association;
  d.Bs.resize(m, s.n_h0());
  if (as.uses_value()) {
    d.X.resize(m, s.p());
    d.Z.resize(m, s.q());
  }
  if (as.uses_extra()) {
    d.Xe = Eigen::MatrixXd::Zero(m, s.p());
    d.Ze = Eigen::MatrixXd::Zero(m, s.q());
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    d.Bs.row(k) = bspline_basis<double>(t(k), s.baseline_knots).transpose();
    if (as.uses_value()) {
      d.X.row(k) = design_row(s.spec.fixed, s.ctx, t(k), cov);
      d.Z.row(k) = design_row(s.spec.random, s.ctx, t(k), cov);
    }
    if (as.uses_extra()) {
      const Eigen::RowVectorXd xe = design_row(as.extra->fixed, s.ctx, t(k), cov);
      const Eigen::RowVectorXd ze = design_row(as.extra->random, s.ctx, t(k), cov);
      for (std::size_t j = 0; j < s.ind_fixed.size(); ++j)
        d.Xe(k, s.ind_fixed[j]) += xe(static_cast<Eigen::Index>(j));
      for (std::size_t j = 0; j < s.ind_random.size(); ++j)
        d.Ze(k, s.ind_random[j]) += ze(static_cast<Eigen::Index>(j));
    }
  }
  return d;
}

HazardDesign make_interval_design(const ModelStructure& s, const Covariates& cov, double a,
                                  double b) {
  if (!(a <= b)) throw Error(ErrorCode::InvalidInterval, "hazard interval has a > b");
  auto [nodes, weights] = rescaled_rule(s.rule, a, b, s.spec.quadrature_panels);
  return make_hazard_design(s, cov, nodes, weights);
}

LongitudinalBlock make_longitudinal_block(const ModelStructure& s,
                                          const std::vector<double>& times,
                                          const std::vector<double>& y,
                                          const std::vector<Covariates>& row_cov,
                                          const std::vector<int>& censor) {
  LongitudinalBlock blk;
  blk.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  blk.X = build_design(s.spec.fixed, s.ctx, times, row_cov);
  blk.Z = build_design(s.spec.random, s.ctx, times, row_cov);
  if (blk.X.rows() == 0) blk.X.resize(0, s.p());
  if (blk.Z.rows() == 0) blk.Z.resize(0, s.q());
  blk.censor = censor;
  if (blk.censor.size() != y.size()) blk.censor.assign(y.size(), 0);
  return blk;
}

std::vector<RawSubject> split_subjects(const ModelSpec& spec, const Table& long_table,
                                       const Table* surv_table, bool require_event) {
  const auto& ids = long_table.column(spec.id_col);
  const auto times = long_table.numbers(spec.time_col);
  const std::vector<double> raw_y = long_table.numbers(spec.response.column);
  std::vector<double> cens;
  if (spec.family.kind == Family::Kind::CensoredGaussian) {
    if (spec.family.censor_column.empty())
      throw Error(ErrorCode::InvalidSpec, "censored-gaussian needs a censor column");
    cens = long_table.numbers(spec.family.censor_column);
    for (double c : cens)
      if (c != 0.0 && c != 1.0) throw Error(ErrorCode::BadValue, "censor column must be 0/1");
  }

  std::vector<RawSubject> out;
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t r = 0; r < long_table.rows(); ++r) {
    auto [it, inserted] = pos.emplace(ids[r], out.size());
    if (inserted) {
      out.emplace_back();
      out.back().id = ids[r];
    }
    RawSubject& s = out[it->second];
    if (times[r] < 0)
      throw Error(ErrorCode::BadValue, "negative time at data row " + std::to_string(r + 1));
    s.times.push_back(times[r]);
    s.y_raw.push_back(raw_y[r]);
    s.censor.push_back(cens.empty() ? 0 : static_cast<int>(cens[r]));
    Covariates c;
    for (const auto& n : long_table.names()) c[n] = long_table.cell(r, n);
    s.row_cov.push_back(std::move(c));
  }

  if (surv_table) {
    const auto& sids = surv_table->column(spec.id_col);
    std::unordered_map<std::string, std::size_t> srow;
    for (std::size_t r = 0; r < surv_table->rows(); ++r)
      if (!srow.emplace(sids[r], r).second)
        throw Error(ErrorCode::DuplicateSubject,
                    "subject '" + sids[r] + "' appears twice in " + surv_table->source());
    for (const auto& [id, r] : srow)
      if (!pos.count(id))
        throw Error(ErrorCode::UnmatchedSubject,
                    "subject '" + id + "' has no longitudinal rows");
    for (auto& s : out) {
      auto it = srow.find(s.id);
      if (it == srow.end())
        throw Error(ErrorCode::UnmatchedSubject,
                    "subject '" + s.id + "' missing from " + surv_table->source());
      for (const auto& n : surv_table->names()) s.covariates[n] = surv_table->cell(it->second, n);
      if (require_event || surv_table->has(spec.event_time_col)) {
        s.T = surv_table->number(it->second, spec.event_time_col);
        s.delta = static_cast<int>(surv_table->number(it->second, spec.event_col));
      }
    }
  } else {
    for (auto& s : out) {
      if (require_event) {
        s.T = std::stod(s.row_cov.front().at(spec.event_time_col));
        double d = 0;
        if (!parse_number(s.row_cov.front().at(spec.event_col), d))
          throw Error(ErrorCode::BadValue, "bad event indicator for subject '" + s.id + "'");
        s.delta = static_cast<int>(d);
      }
    }
  }

  for (auto& s : out) {
    for (const auto& [k, v] : s.row_cov.front())
      if (!s.covariates.count(k)) s.covariates[k] = v;
    for (auto& rc : s.row_cov)
      for (const auto& [k, v] : s.covariates)
        if (!rc.count(k)) rc[k] = v;
    // order measurements by time
    std::vector<std::size_t> idx(s.times.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return s.times[a] < s.times[b]; });
    RawSubject sorted = s;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      sorted.times[k] = s.times[idx[k]];
      sorted.y_raw[k] = s.y_raw[idx[k]];
      sorted.censor[k] = s.censor[idx[k]];
      sorted.row_cov[k] = s.row_cov[idx[k]];
    }
    s = std::move(sorted);
    if (!require_event && s.T == 0.0) s.T = s.times.back();
    if (require_event) {
      if (!(s.T > 0)) throw Error(ErrorCode::BadValue, "subject '" + s.id + "' has T <= 0");
      if (s.delta != 0 && s.delta != 1)
        throw Error(ErrorCode::BadValue, "event indicator of subject '" + s.id + "' is not 0/1");
      if (s.times.back() > s.T * (1 + 1e-12))
        throw Error(ErrorCode::BadValue,
                    "subject '" + s.id + "' has a measurement after its event time");
    }
  }
  return out;
}

std::map<std::string, std::vector<std::string>> observed_levels(const ModelSpec& spec,
                                                                const Table& long_table,
                                                                const Table* surv_table) {
  std::set<std::string> covs;
  for (const auto* l : {&spec.fixed, &spec.random, &spec.survival})
    for (const auto& c : l->covariates()) covs.insert(c);
  if (spec.association.extra) {
    for (const auto& c : spec.association.extra->fixed.covariates()) covs.insert(c);
    for (const auto& c : spec.association.extra->random.covariates()) covs.insert(c);
  }
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& c : covs) {
    if (long_table.has(c)) {
      if (!long_table.is_numeric(c)) out[c] = long_table.levels(c);
    } else if (surv_table && surv_table->has(c)) {
      if (!surv_table->is_numeric(c)) out[c] = surv_table->levels(c);
    } else {
      throw Error(ErrorCode::MissingColumn, "covariate '" + c + "' not found in the data");
    }
  }
  return out;
}

DataFingerprint fingerprint(const Table& long_table, const Table* surv_table) {
  DataFingerprint fp;
  fp.long_rows = long_table.rows();
  fp.long_columns = long_table.names();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  feed(format_csv(long_table));
  if (surv_table) {
    fp.surv_columns = surv_table->names();
    fp.subjects = surv_table->rows();
    feed(format_csv(*surv_table));
  } else {
    fp.subjects = long_table.levels(long_table.names().front()).size();
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  fp.hash = buf;
  return fp;
}

JointData prepare_data(const ModelStructure& s, const std::vector<RawSubject>& raw,
                       const DataFingerprint& fp) {
  JointData jd;
  jd.fingerprint = fp;
  jd.subjects.reserve(raw.size());
  for (const auto& r : raw) {
    SubjectData sd;
    sd.id = r.id;
    sd.covariates = r.covariates;
    sd.times = r.times;
    std::vector<double> y(r.y_raw.size());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = s.spec.response.apply(r.y_raw[k]);
    sd.longit = make_longitudinal_block(s, r.times, y, r.row_cov, r.censor);
    sd.T = r.T;
    sd.delta = r.delta;
    sd.hazard = make_subject_hazard(s, r.covariates);
    sd.nodes = make_interval_design(s, r.covariates, 0.0, r.T);
    sd.at_T = make_hazard_design(s, r.covariates, Eigen::VectorXd::Constant(1, r.T),
                                 Eigen::VectorXd::Ones(1));
    jd.n_events += static_cast<std::size_t>(r.delta);
    jd.n_obs += y.size();
    jd.subjects.push_back(std::move(sd));
  }
  return jd;
}

}  // namespace jmx
