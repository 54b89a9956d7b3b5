#include "jmx/service.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <set>

#include "httplib.h"
#include "json.hpp"

#include "jmx/error.hpp"
#include "jmx/prediction.hpp"

namespace jmx {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kExtension = ".jmx";

struct HttpError {
  int status;
  std::string message;
  std::string field;
};

[[noreturn]] void bad_request(const std::string& field, const std::string& message) {
  throw HttpError{400, message, field};
}

json finite_array(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw HttpError{500, std::string("non-finite value in ") + what, ""};
  return v;
}

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 200) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return id.front() != '.';
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) bad_request(path + key, "missing field");
  return j.at(key);
}

double number_at(const json& j, const std::string& field) {
  if (!j.is_number()) bad_request(field, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) bad_request(field, "expected a finite number");
  return x;
}

RawSubject parse_subject(const json& body, const ModelStructure& s) {
  const json& js = require(body, "subject", "");
  if (!js.is_object()) bad_request("subject", "expected an object");
  RawSubject raw;
  raw.id = "new";
  if (js.contains("id")) {
    const json& id = js.at("id");
    if (id.is_string()) raw.id = id.get<std::string>();
    else if (id.is_number()) raw.id = format_number(id.get<double>());
    else bad_request("subject.id", "expected a string or number");
  }
  if (js.contains("covariates")) {
    const json& jc = js.at("covariates");
    if (!jc.is_object()) bad_request("subject.covariates", "expected an object");
    for (const auto& [k, v] : jc.items()) {
      if (v.is_string()) raw.covariates[k] = v.get<std::string>();
      else if (v.is_number()) raw.covariates[k] = format_number(number_at(v, "subject.covariates." + k));
      else bad_request("subject.covariates." + k, "expected a string or number");
    }
  }
  std::set<std::string> needed = s.spec.fixed.covariates();
  for (const auto* tl : {&s.spec.random, &s.spec.survival})
    for (const auto& c : tl->covariates()) needed.insert(c);
  for (const auto& f : s.spec.association.transform_value)
    if (f.kind == Feature::Kind::InteractWith) needed.insert(f.covariate);
  for (const auto& f : s.spec.association.transform_extra)
    if (f.kind == Feature::Kind::InteractWith) needed.insert(f.covariate);
  needed.erase(s.spec.time_col);
  for (const auto& c : needed) {
    auto it = raw.covariates.find(c);
    if (it == raw.covariates.end()) bad_request("subject.covariates." + c, "missing covariate");
    if (s.ctx.is_factor(c)) {
      const auto& lv = s.ctx.factors.at(c);
      if (std::find(lv.begin(), lv.end(), it->second) == lv.end())
        bad_request("subject.covariates." + c, "unknown level '" + it->second + "'");
    } else {
      double x = 0;
      if (!parse_number(it->second, x)) bad_request("subject.covariates." + c, "expected a number");
    }
  }
  if (js.contains("measurements")) {
    const json& jm = js.at("measurements");
    if (!jm.is_array()) bad_request("subject.measurements", "expected an array");
    for (std::size_t k = 0; k < jm.size(); ++k) {
      const std::string f = "subject.measurements[" + std::to_string(k) + "].";
      const double t = number_at(require(jm[k], "time", f), f + "time");
      const double y = number_at(require(jm[k], "value", f), f + "value");
      if (t < 0) bad_request(f + "time", "must be nonnegative");
      if (!raw.times.empty() && t < raw.times.back()) bad_request(f + "time", "times must be nondecreasing");
      if (s.spec.response.kind == ResponseSpec::Kind::Log && !(y > 0))
        bad_request(f + "value", "must be positive for a log response");
      if (s.spec.family.binary() && s.spec.response.kind == ResponseSpec::Kind::Identity && y != 0 && y != 1)
        bad_request(f + "value", "must be 0 or 1 for a binary response");
      raw.times.push_back(t);
      raw.y_raw.push_back(y);
      raw.censor.push_back(0);
      raw.row_cov.push_back(raw.covariates);
    }
  }
  raw.T = raw.times.empty() ? 0.0 : raw.times.back();
  raw.delta = 0;
  return raw;
}

struct RequestOptions {
  std::vector<double> times;
  std::optional<double> last_time;
  int M = 200;
  std::uint64_t seed = 1;
  bool simulate = true;
  PredictOptions::Type type = PredictOptions::Type::Subject;
  PredictOptions::Interval interval = PredictOptions::Interval::Confidence;
};

RequestOptions parse_options(const json& body) {
  RequestOptions o;
  if (!body.contains("options")) return o;
  const json& jo = body.at("options");
  if (!jo.is_object()) bad_request("options", "expected an object");
  if (jo.contains("times")) {
    const json& jt = jo.at("times");
    if (!jt.is_array()) bad_request("options.times", "expected an array");
    for (std::size_t k = 0; k < jt.size(); ++k)
      o.times.push_back(number_at(jt[k], "options.times[" + std::to_string(k) + "]"));
  }
  if (jo.contains("last_time")) o.last_time = number_at(jo.at("last_time"), "options.last_time");
  if (jo.contains("M")) {
    const double m = number_at(jo.at("M"), "options.M");
    if (m < 1 || m > 100000 || m != std::floor(m)) bad_request("options.M", "expected an integer in [1, 100000]");
    o.M = static_cast<int>(m);
  }
  if (jo.contains("seed")) {
    const double sd = number_at(jo.at("seed"), "options.seed");
    if (sd < 0 || sd != std::floor(sd)) bad_request("options.seed", "expected a nonnegative integer");
    o.seed = static_cast<std::uint64_t>(sd);
  }
  if (jo.contains("simulate")) {
    if (!jo.at("simulate").is_boolean()) bad_request("options.simulate", "expected true or false");
    o.simulate = jo.at("simulate").get<bool>();
  }
  if (jo.contains("type")) {
    const json& jt = jo.at("type");
    if (jt == "subject") o.type = PredictOptions::Type::Subject;
    else if (jt == "marginal") o.type = PredictOptions::Type::Marginal;
    else bad_request("options.type", "expected 'subject' or 'marginal'");
  }
  if (jo.contains("interval")) {
    const json& ji = jo.at("interval");
    if (ji == "none") o.interval = PredictOptions::Interval::None;
    else if (ji == "confidence") o.interval = PredictOptions::Interval::Confidence;
    else if (ji == "prediction") o.interval = PredictOptions::Interval::Prediction;
    else bad_request("options.interval", "expected 'none', 'confidence' or 'prediction'");
  }
  return o;
}

SurvfitOptions survfit_options(const RequestOptions& o) {
  SurvfitOptions so;
  so.times = o.times;
  so.last_time = o.last_time;
  so.M = o.M;
  so.seed = o.seed;
  so.simulate = o.simulate;
  return so;
}

json survfit_json(const SurvfitResult& r, const RequestOptions& o) {
  std::vector<double> t, mean, median, lower, upper, first;
  for (const auto& row : r.rows) {
    t.push_back(row.time);
    mean.push_back(row.mean);
    median.push_back(row.median);
    lower.push_back(row.lower);
    upper.push_back(row.upper);
    first.push_back(row.first_order);
  }
  json j = {{"id", r.id},
            {"last_time", r.last_time},
            {"M", o.M},
            {"simulate", o.simulate},
            {"seed", o.seed},
            {"times", finite_array(t, "times")},
            {"mean", finite_array(mean, "mean")},
            {"median", finite_array(median, "median")},
            {"lower", finite_array(lower, "lower")},
            {"upper", finite_array(upper, "upper")},
            {"first_order", finite_array(first, "first_order")},
            {"warnings", r.warnings}};
  j["request_times"] = o.times.empty() ? json(nullptr) : json(o.times);
  return j;
}

json model_json(const std::string& id, const Artifact& a) {
  const FittedModel& m = a.model;
  const ModelStructure& s = m.structure;
  json covs = json::object();
  std::set<std::string> names = s.spec.fixed.covariates();
  for (const auto* tl : {&s.spec.random, &s.spec.survival})
    for (const auto& c : tl->covariates()) names.insert(c);
  names.erase(s.spec.time_col);
  for (const auto& c : names) covs[c] = s.ctx.is_factor(c) ? json(s.ctx.factors.at(c)) : json("numeric");
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  return {{"id", id},
          {"name", m.name},
          {"format", kArtifactFormat},
          {"response", s.spec.response.str()},
          {"time_var", s.spec.time_col},
          {"family", s.spec.family.name()},
          {"association", association_name(s.spec.association.kind)},
          {"covariates", covs},
          {"fixed", s.fixed_names},
          {"alpha", s.alpha_names},
          {"counts", {{"subjects", m.n_subjects}, {"events", m.n_events}, {"observations", m.n_obs}}},
          {"stats",
           {{"DIC", num(m.stats.dic)}, {"pD", num(m.stats.pD)}, {"LPML", num(m.stats.lpml)},
            {"marginal_loglik", num(m.stats.marginal_loglik)}}},
          {"time_summary", {{"min", s.time_min}, {"q90", s.time_q90}, {"max", s.time_max}}},
          {"draws", m.draws.size()}};
}

json error_body(const std::string& message, const std::string& field) {
  json j = {{"error", message}};
  if (!field.empty()) j["field"] = field;
  return j;
}

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::SingularDesign:
    case ErrorCode::NonfiniteHazard:
    case ErrorCode::NonfiniteLogPosterior:
    case ErrorCode::ParseError:
    case ErrorCode::VersionMismatch:
      return 500;
    default:
      return 400;
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

}  // namespace

ModelService::ModelService(std::string models_dir) : dir_(std::move(models_dir)) {}

std::shared_ptr<const Artifact> ModelService::model(const std::string& id) const {
  if (!valid_id(id)) throw HttpError{404, "unknown model '" + id + "'", ""};
  {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
  }
  std::unique_lock lock(mutex_);
  auto it = cache_.find(id);
  if (it != cache_.end()) return it->second;
  const fs::path p = fs::path(dir_) / (id + kExtension);
  if (!fs::is_regular_file(p)) throw HttpError{404, "unknown model '" + id + "'", ""};
  auto a = std::make_shared<const Artifact>(load_model(p.string()));
  cache_[id] = a;
  return a;
}

ServiceResponse ModelService::handle(const std::string& method, const std::string& path,
                                     const std::string& body) const {
  try {
    const auto parts = split_path(path);
    auto parse_body = [&]() {
      try {
        return json::parse(body);
      } catch (const json::parse_error& e) {
        throw HttpError{400, "malformed JSON at byte " + std::to_string(e.byte), ""};
      }
    };

    if (method == "GET" && parts.size() == 1 && parts[0] == "models") {
      std::vector<std::string> ids;
      if (fs::is_directory(dir_))
        for (const auto& e : fs::directory_iterator(dir_))
          if (e.is_regular_file() && e.path().extension() == kExtension) ids.push_back(e.path().stem().string());
      std::sort(ids.begin(), ids.end());
      json list = json::array();
      for (const auto& id : ids) {
        try {
          list.push_back(model_json(id, *model(id)));
        } catch (const Error& e) {
          list.push_back({{"id", id}, {"error", e.what()}});
        }
      }
      return {200, list.dump()};
    }
    if (method == "GET" && parts.size() == 2 && parts[0] == "models")
      return {200, model_json(parts[1], *model(parts[1])).dump()};

    if (method == "POST" && parts.size() == 3 && parts[0] == "models" && parts[2] == "survfit") {
      const auto a = model(parts[1]);
      const json req = parse_body();
      const ModelStructure& s = a->model.structure;
      const RawSubject raw = parse_subject(req, s);
      const RequestOptions o = parse_options(req);
      if (raw.times.empty() && !o.last_time) bad_request("options.last_time", "required without measurements");
      const SurvfitResult r = survfit_dynamic(s, a->model.draws, raw, survfit_options(o));
      json out = survfit_json(r, o);
      out["model"] = parts[1];
      return {200, out.dump()};
    }

    if (method == "POST" && parts.size() == 3 && parts[0] == "models" && parts[2] == "predict-long") {
      const auto a = model(parts[1]);
      const json req = parse_body();
      const ModelStructure& s = a->model.structure;
      const RawSubject raw = parse_subject(req, s);
      const RequestOptions o = parse_options(req);
      PredictOptions po;
      po.times = o.times;
      po.type = o.type;
      po.interval = o.interval;
      po.last_time = o.last_time;
      po.M = o.M;
      po.seed = o.seed;
      const auto rows = predict_longitudinal(s, a->model.draws, raw, po);
      std::vector<double> t, pred, lo, hi;
      for (const auto& r : rows) {
        t.push_back(r.time);
        pred.push_back(r.pred);
        lo.push_back(r.lower);
        hi.push_back(r.upper);
      }
      json out = {{"model", parts[1]},
                  {"id", raw.id},
                  {"times", finite_array(t, "times")},
                  {"pred", finite_array(pred, "pred")},
                  {"lower", finite_array(lo, "lower")},
                  {"upper", finite_array(hi, "upper")},
                  {"scale", "linear predictor"}};
      return {200, out.dump()};
    }

    if (method == "POST" && parts.size() == 2 && parts[0] == "bma" && parts[1] == "survfit") {
      const json req = parse_body();
      const json& jm = require(req, "models", "");
      if (!jm.is_array() || jm.empty()) bad_request("models", "expected a nonempty array of model ids");
      std::vector<std::string> ids;
      std::vector<std::shared_ptr<const Artifact>> models;
      for (std::size_t k = 0; k < jm.size(); ++k) {
        if (!jm[k].is_string()) bad_request("models[" + std::to_string(k) + "]", "expected a model id");
        ids.push_back(jm[k].get<std::string>());
        models.push_back(model(ids.back()));
      }
      RequestOptions o = parse_options(req);
      const ModelStructure& s0 = models.front()->model.structure;
      const RawSubject raw0 = parse_subject(req, s0);
      if (raw0.times.empty() && !o.last_time) bad_request("options.last_time", "required without measurements");
      const double t = o.last_time ? *o.last_time : last_measurement(raw0);
      if (o.times.empty()) o.times = default_survfit_grid(s0, t);
      if (o.times.empty()) bad_request("options.times", "no default prediction times after the last time");

      bool data_evidence = true;
      for (const auto& m : models) data_evidence = data_evidence && std::isfinite(m->model.stats.marginal_loglik);
      std::vector<double> log_ev;
      std::vector<SurvfitResult> results;
      for (const auto& m : models) {
        const ModelStructure& s = m->model.structure;
        const RawSubject raw = parse_subject(req, s);
        double le = subject_marginal_loglik(s, m->model.draws, raw, t);
        if (data_evidence) le += m->model.stats.marginal_loglik;
        log_ev.push_back(le);
        SurvfitOptions so = survfit_options(o);
        so.last_time = t;
        results.push_back(survfit_dynamic(s, m->model.draws, raw, so));
      }
      const std::vector<double> w = bma_weights(log_ev);
      json out = survfit_json(bma_combine(results, w), o);
      out["models"] = ids;
      out["weights"] = finite_array(w, "weights");
      out["log_evidence"] = finite_array(log_ev, "log_evidence");
      out["data_evidence"] = data_evidence;
      return {200, out.dump()};
    }

    return {404, error_body("no such endpoint", "").dump()};
  } catch (const HttpError& e) {
    return {e.status, error_body(e.message, e.field).dump()};
  } catch (const Error& e) {
    return {status_for(e.code()), error_body(e.what(), "").dump()};
  } catch (const std::exception& e) {
    return {500, error_body(e.what(), "").dump()};
  }
}

void ModelService::serve(const std::string& host, int port) const {
  httplib::Server svr;
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, "application/json");
  };
  svr.Get(".*", route);
  svr.Post(".*", route);
  svr.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (!svr.listen(host, port))
    throw Error(ErrorCode::Usage, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace jmx
