#include "jmx/artifact.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "jmx/error.hpp"

namespace jmx {

using json = nlohmann::json;

namespace {

// NaN and infinities have no JSON literal; they travel as null / strings.
json num(double x) {
  if (std::isnan(x)) return nullptr;
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double get_num(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::ParseError, "expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

json mat(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(num(m(i, j)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd get_mat(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (r < 0 || c < 0 || data.size() != static_cast<std::size_t>(r * c))
    throw Error(ErrorCode::ParseError, "matrix size does not match its data");
  Eigen::MatrixXd m(r, c);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index jj = 0; jj < c; ++jj) m(i, jj) = get_num(data[k++]);
  return m;
}

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

Eigen::VectorXd get_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
  return v;
}

json params(const Params& p) {
  return {{"beta", vec(p.beta)},   {"sigma2", num(p.sigma2)},       {"D", mat(p.D)},
          {"gamma", vec(p.gamma)}, {"alpha", vec(p.alpha)},         {"gammas_h0", vec(p.gammas_h0)},
          {"tau_h", num(p.tau_h)}};
}

Params get_params(const json& j) {
  Params p;
  p.beta = get_vec(j.at("beta"));
  p.sigma2 = get_num(j.at("sigma2"));
  p.D = get_mat(j.at("D"));
  p.gamma = get_vec(j.at("gamma"));
  p.alpha = get_vec(j.at("alpha"));
  p.gammas_h0 = get_vec(j.at("gammas_h0"));
  p.tau_h = get_num(j.at("tau_h"));
  return p;
}

json knots(const std::vector<double>& interior, double low, double high) {
  json a = json::array();
  for (double x : interior) a.push_back(num(x));
  return {{"interior", std::move(a)}, {"low", num(low)}, {"high", num(high)}};
}

std::vector<double> get_doubles(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(get_num(x));
  return out;
}

json to_json(const Artifact& a) {
  const FittedModel& m = a.model;
  const ModelStructure& s = m.structure;

  json splines = json::object();
  for (const auto& [df, k] : s.ctx.splines) splines[std::to_string(df)] = knots(k.interior, k.low, k.high);
  json ctx = {{"time_var", s.ctx.time_var}, {"splines", std::move(splines)}, {"factors", s.ctx.factors}};

  json bk = knots(s.baseline_knots.interior, s.baseline_knots.low, s.baseline_knots.high);
  bk["degree"] = s.baseline_knots.degree;

  const Draws& d = m.draws;
  json acceptance = json::object();
  for (const auto& [k, v] : d.acceptance) acceptance[k] = num(v);
  json draws = {{"beta", mat(d.beta)},         {"sigma2", vec(d.sigma2)},     {"D", mat(d.D)},
                {"gamma", mat(d.gamma)},       {"alpha", mat(d.alpha)},       {"gammas_h0", mat(d.gammas_h0)},
                {"tau_h", vec(d.tau_h)},       {"loglik", mat(d.loglik)},     {"b_mean", mat(d.b_mean)},
                {"b_sd", mat(d.b_sd)},         {"acceptance", std::move(acceptance)},
                {"warnings", d.warnings},      {"thin", d.thin}};

  const FitStats& st = m.stats;
  json stats = {{"dic", num(st.dic)},
                {"pD", num(st.pD)},
                {"lpml", num(st.lpml)},
                {"deviance_mean", num(st.deviance_mean)},
                {"deviance_at_mean", num(st.deviance_at_mean)},
                {"marginal_loglik", num(st.marginal_loglik)}};

  json cov = json::object();
  for (const auto& [k, v] : m.proposal_cov) cov[k] = mat(v);
  json init = {{"theta", params(m.init_theta)},
               {"proposal_cov", std::move(cov)},
               {"provenance", m.provenance},
               {"notes", m.notes}};

  const DataFingerprint& fp = m.fingerprint;
  json fingerprint = {{"long_rows", fp.long_rows},
                      {"subjects", fp.subjects},
                      {"long_columns", fp.long_columns},
                      {"surv_columns", fp.surv_columns},
                      {"hash", fp.hash}};

  return {{"format", kArtifactFormat},
          {"name", m.name},
          {"config", config_text(a.config)},
          {"context", std::move(ctx)},
          {"baseline_knots", std::move(bk)},
          {"time_summary", {{"min", num(s.time_min)}, {"q90", num(s.time_q90)}, {"max", num(s.time_max)}}},
          {"counts", {{"subjects", m.n_subjects}, {"events", m.n_events}, {"observations", m.n_obs}}},
          {"elapsed_seconds", num(m.elapsed_seconds)},
          {"draws", std::move(draws)},
          {"stats", std::move(stats)},
          {"init", std::move(init)},
          {"fingerprint", std::move(fingerprint)}};
}

Artifact from_json(const json& j) {
  Artifact a;
  a.config = parse_config(j.at("config").get<std::string>(), "artifact config");
  FittedModel& m = a.model;
  m.name = j.at("name").get<std::string>();

  DesignContext ctx;
  const json& jc = j.at("context");
  ctx.time_var = jc.at("time_var").get<std::string>();
  for (const auto& [key, v] : jc.at("splines").items()) {
    SplineKnots k;
    k.interior = get_doubles(v.at("interior"));
    k.low = get_num(v.at("low"));
    k.high = get_num(v.at("high"));
    ctx.splines[std::stoi(key)] = k;
  }
  ctx.factors = jc.at("factors").get<std::map<std::string, std::vector<std::string>>>();

  KnotVector bk;
  const json& jb = j.at("baseline_knots");
  bk.interior = get_doubles(jb.at("interior"));
  bk.low = get_num(jb.at("low"));
  bk.high = get_num(jb.at("high"));
  bk.degree = jb.at("degree").get<int>();
  bk.validate();

  const json& ts = j.at("time_summary");
  m.structure = restore_structure(a.config.spec, ctx, bk, get_num(ts.at("min")), get_num(ts.at("q90")),
                                  get_num(ts.at("max")));

  const json& jn = j.at("counts");
  m.n_subjects = jn.at("subjects").get<std::size_t>();
  m.n_events = jn.at("events").get<std::size_t>();
  m.n_obs = jn.at("observations").get<std::size_t>();
  m.elapsed_seconds = get_num(j.at("elapsed_seconds"));

  const json& jd = j.at("draws");
  Draws& d = m.draws;
  d.beta = get_mat(jd.at("beta"));
  d.sigma2 = get_vec(jd.at("sigma2"));
  d.D = get_mat(jd.at("D"));
  d.gamma = get_mat(jd.at("gamma"));
  d.alpha = get_mat(jd.at("alpha"));
  d.gammas_h0 = get_mat(jd.at("gammas_h0"));
  d.tau_h = get_vec(jd.at("tau_h"));
  d.loglik = get_mat(jd.at("loglik"));
  d.b_mean = get_mat(jd.at("b_mean"));
  d.b_sd = get_mat(jd.at("b_sd"));
  for (const auto& [k, v] : jd.at("acceptance").items()) d.acceptance[k] = get_num(v);
  d.warnings = jd.at("warnings").get<std::vector<std::string>>();
  d.thin = jd.at("thin").get<int>();

  const ModelStructure& s = m.structure;
  const Eigen::Index K = d.beta.rows();
  if (d.beta.cols() != s.p() || d.D.cols() != s.q() * s.q() || d.gamma.cols() != s.n_gamma() ||
      d.alpha.cols() != s.n_alpha() || d.gammas_h0.cols() != s.n_h0() || d.sigma2.size() != K ||
      d.D.rows() != K || d.gamma.rows() != K || d.alpha.rows() != K || d.gammas_h0.rows() != K ||
      d.tau_h.size() != K)
    throw Error(ErrorCode::ParseError, "draw dimensions do not match the model configuration");

  const json& st = j.at("stats");
  m.stats.dic = get_num(st.at("dic"));
  m.stats.pD = get_num(st.at("pD"));
  m.stats.lpml = get_num(st.at("lpml"));
  m.stats.deviance_mean = get_num(st.at("deviance_mean"));
  m.stats.deviance_at_mean = get_num(st.at("deviance_at_mean"));
  m.stats.marginal_loglik = get_num(st.at("marginal_loglik"));

  const json& ji = j.at("init");
  m.init_theta = get_params(ji.at("theta"));
  for (const auto& [k, v] : ji.at("proposal_cov").items()) m.proposal_cov[k] = get_mat(v);
  m.provenance = ji.at("provenance").get<std::map<std::string, std::string>>();
  m.notes = ji.at("notes").get<std::vector<std::string>>();

  const json& jf = j.at("fingerprint");
  m.fingerprint.long_rows = jf.at("long_rows").get<std::size_t>();
  m.fingerprint.subjects = jf.at("subjects").get<std::size_t>();
  m.fingerprint.long_columns = jf.at("long_columns").get<std::vector<std::string>>();
  m.fingerprint.surv_columns = jf.at("surv_columns").get<std::vector<std::string>>();
  m.fingerprint.hash = jf.at("hash").get<std::string>();
  return a;
}

}  // namespace

std::string artifact_text(const Artifact& a) { return to_json(a).dump(1) + "\n"; }

Artifact parse_artifact(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError,
                source + ": malformed artifact at byte " + std::to_string(e.byte));
  }
  if (!j.is_object() || !j.contains("format"))
    throw Error(ErrorCode::ParseError, source + ": not a model artifact (no format tag)");
  const json& tag = j.at("format");
  if (!tag.is_string() || tag.get<std::string>() != kArtifactFormat)
    throw Error(ErrorCode::VersionMismatch,
                source + ": artifact format " + tag.dump() + " is not supported (expected " +
                    kArtifactFormat + ")");
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, source + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError) throw;
    throw Error(ErrorCode::ParseError, source + ": " + e.what());
  }
}

void save_model(const Artifact& a, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Usage, "cannot write '" + path + "'");
  out << artifact_text(a);
  if (!out) throw Error(ErrorCode::Usage, "write failed for '" + path + "'");
}

Artifact load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BadValue, "cannot open model '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_artifact(ss.str(), path);
}

}  // namespace jmx
