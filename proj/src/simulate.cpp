#include "jmx/simulate.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "jmx/error.hpp"
#include "jmx/mcmc.hpp"
#include "jmx/survival.hpp"

namespace jmx {

double invert_survival(const std::function<double(double)>& survival, double u, double upper,
                       double tol) {
  if (!(u > 0 && u < 1)) throw Error(ErrorCode::BadValue, "invert_survival: u must be in (0, 1)");
  double hi = upper;
  if (!std::isfinite(hi)) {
    hi = 1.0;
    while (survival(hi) > u) {
      hi *= 2.0;
      if (hi > 1e6) return std::numeric_limits<double>::infinity();
    }
  } else if (survival(hi) > u) {
    return std::numeric_limits<double>::infinity();
  }
  double lo = 0.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (survival(mid) > u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

bool all_numeric(const std::vector<std::string>& v) {
  double x = 0;
  for (const auto& s : v)
    if (!parse_number(s, x)) return false;
  return true;
}

KnotVector simulation_knots(std::size_t Q, int degree, double horizon) {
  KnotVector k;
  k.low = 0.0;
  k.high = horizon;
  k.degree = Q <= 1 ? 0 : std::min<int>(degree, static_cast<int>(Q) - 1);
  const int n_interior = static_cast<int>(Q) - k.degree - 1;
  for (int j = 1; j <= n_interior; ++j) k.interior.push_back(horizon * j / (n_interior + 1));
  return k;
}

}  // namespace

ModelStructure simulation_structure(const SimulationSpec& sim) {
  ModelSpec spec = sim.spec;
  spec.compile();
  std::map<std::string, std::vector<std::string>> observed;
  for (const auto& g : sim.covariates)
    if (g.kind == CovariateGen::Kind::Binary && !all_numeric(g.levels)) observed[g.name] = g.levels;
  std::vector<const TermList*> lists{&spec.fixed, &spec.random, &spec.survival};
  if (spec.association.extra) {
    lists.push_back(&spec.association.extra->fixed);
    lists.push_back(&spec.association.extra->random);
  }
  const DesignContext ctx = make_design_context(spec.time_col, lists, sim.visits, observed, spec.levels);
  const double horizon = sim.baseline_knots.high;
  return restore_structure(spec, ctx, sim.baseline_knots, 0.0, horizon, horizon);
}

SimulationResult simulate_joint(const SimulationSpec& sim, std::uint64_t seed) {
  if (sim.spec.response.kind == ResponseSpec::Kind::Above)
    throw Error(ErrorCode::InvalidSpec, "simulation supports identity or log responses only");
  if (sim.visits.empty() || sim.visits.front() < 0)
    throw Error(ErrorCode::InvalidSpec, "simulation needs nonnegative visit times");
  if (sim.censor_rate < 0) throw Error(ErrorCode::InvalidSpec, "censor_rate must be >= 0");
  const ModelStructure s = simulation_structure(sim);
  const ModelSpec& spec = s.spec;
  const DesignContext& ctx = s.ctx;

  const Params& th = sim.truth;
  if (th.beta.size() != s.p() || th.gamma.size() != s.n_gamma() || th.alpha.size() != s.n_alpha() ||
      th.gammas_h0.size() != s.n_h0() || th.D.rows() != s.q() || th.D.cols() != s.q())
    throw Error(ErrorCode::InvalidSpec,
                "truth dimensions: beta " + std::to_string(s.p()) + ", gamma " + std::to_string(s.n_gamma()) +
                    ", alpha " + std::to_string(s.n_alpha()) + ", gammas_h0 " + std::to_string(s.n_h0()) +
                    ", D " + std::to_string(s.q()) + "x" + std::to_string(s.q()));
  Eigen::MatrixXd L;
  if (s.q() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(th.D);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::InvalidSpec, "truth D is not positive definite");
    L = llt.matrixL();
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::student_t_distribution<double> student(spec.family.df);
  const double sigma = std::sqrt(th.sigma2);
  const bool censored_family = spec.family.kind == Family::Kind::CensoredGaussian;

  std::vector<std::string> cov_names;
  for (const auto& g : sim.covariates) cov_names.push_back(g.name);

  std::vector<std::vector<std::string>> lcols(3 + cov_names.size() + (censored_family ? 1 : 0));
  std::vector<std::vector<std::string>> scols(3 + cov_names.size());

  SimulationResult out;
  out.b.resize(static_cast<Eigen::Index>(sim.n), s.q());
  for (std::size_t i = 0; i < sim.n; ++i) {
    const std::string id = std::to_string(i + 1);
    Covariates cov;
    for (const auto& g : sim.covariates) {
      switch (g.kind) {
        case CovariateGen::Kind::Binary:
          cov[g.name] = g.levels[unif(rng) < g.a ? 1 : 0];
          break;
        case CovariateGen::Kind::Normal:
          cov[g.name] = format_number(g.a + g.b * normal(rng));
          break;
        case CovariateGen::Kind::Uniform:
          cov[g.name] = format_number(g.a + (g.b - g.a) * unif(rng));
          break;
      }
    }
    Eigen::VectorXd b(s.q());
    for (Eigen::Index k = 0; k < s.q(); ++k) b(k) = normal(rng);
    if (s.q() > 0) b = L * b;
    out.b.row(static_cast<Eigen::Index>(i)) = b.transpose();

    const double u = unif(rng);
    auto surv = [&](double t) {
      try {
        return survival_function(s, cov, th, b, t);
      } catch (const Error&) {
        return 0.0;
      }
    };
    const double t_event = invert_survival(surv, u, sim.admin_time);
    const double t_cens = sim.censor_rate > 0
                              ? std::exponential_distribution<double>(sim.censor_rate)(rng)
                              : std::numeric_limits<double>::infinity();
    const double T = std::min({t_event, t_cens, sim.admin_time});
    if (!std::isfinite(T))
      throw Error(ErrorCode::InvalidSpec, "subject " + id + " never experiences the event; set sim.admin_time");
    const int delta = t_event <= std::min(t_cens, sim.admin_time) ? 1 : 0;
    out.event_times.push_back(t_event);

    for (std::size_t v = 0; v < sim.visits.size(); ++v) {
      double t = sim.visits[v];
      if (v > 0 && sim.visit_jitter > 0) t = std::max(0.0, t + sim.visit_jitter * (2 * unif(rng) - 1));
      if (v > 0 && t >= T) break;
      const double eta = linear_predictor(design_row(spec.fixed, ctx, t, cov), design_row(spec.random, ctx, t, cov),
                                          th.beta, b);
      double y = 0.0;
      switch (spec.family.kind) {
        case Family::Kind::Gaussian:
        case Family::Kind::CensoredGaussian:
          y = eta + sigma * normal(rng);
          break;
        case Family::Kind::StudentT:
          y = eta + sigma * student(rng);
          break;
        case Family::Kind::BinomialLogit:
          y = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
          break;
        case Family::Kind::BinomialProbit:
          y = unif(rng) < 0.5 * std::erfc(-eta / std::sqrt(2.0)) ? 1.0 : 0.0;
          break;
      }
      if (spec.response.kind == ResponseSpec::Kind::Log) y = std::exp(y);
      lcols[0].push_back(id);
      lcols[1].push_back(format_number(t));
      lcols[2].push_back(format_number(y));
      for (std::size_t c = 0; c < cov_names.size(); ++c) lcols[3 + c].push_back(cov[cov_names[c]]);
      if (censored_family) lcols.back().push_back("0");
    }
    scols[0].push_back(id);
    scols[1].push_back(format_number(T));
    scols[2].push_back(std::to_string(delta));
    for (std::size_t c = 0; c < cov_names.size(); ++c) scols[3 + c].push_back(cov[cov_names[c]]);
  }

  std::vector<std::string> lnames{spec.id_col, spec.time_col, spec.response.column};
  lnames.insert(lnames.end(), cov_names.begin(), cov_names.end());
  if (censored_family) lnames.push_back(spec.family.censor_column);
  std::vector<std::string> snames{spec.id_col, spec.event_time_col, spec.event_col};
  snames.insert(snames.end(), cov_names.begin(), cov_names.end());
  out.long_table = Table(lnames, std::move(lcols), "simulated long");
  out.surv_table = Table(snames, std::move(scols), "simulated surv");
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

double number(const std::string& key, const std::string& v) {
  double x = 0;
  if (!parse_number(v, x)) throw Error(ErrorCode::InvalidSpec, key + ": '" + v + "' is not a number");
  return x;
}

Eigen::VectorXd numbers(const std::string& key, const std::string& v) {
  if (trim(v).empty()) return Eigen::VectorXd(0);
  const auto parts = split(v, ',');
  Eigen::VectorXd out(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t k = 0; k < parts.size(); ++k) out(static_cast<Eigen::Index>(k)) = number(key, parts[k]);
  return out;
}

CovariateGen parse_generator(const std::string& name, const std::string& v) {
  CovariateGen g;
  g.name = name;
  const auto open = v.find('(');
  if (open == std::string::npos || v.back() != ')')
    throw Error(ErrorCode::InvalidSpec, "covariate " + name + ": expected kind(args)");
  const std::string kind = trim(v.substr(0, open));
  const auto args = split(v.substr(open + 1, v.size() - open - 2), ',');
  const std::string key = "sim.covariate." + name;
  if (kind == "binary") {
    if (args.size() != 1 && args.size() != 3)
      throw Error(ErrorCode::InvalidSpec, key + ": binary(p) or binary(p, level0, level1)");
    g.kind = CovariateGen::Kind::Binary;
    g.a = number(key, args[0]);
    if (args.size() == 3) g.levels = {args[1], args[2]};
  } else if (kind == "normal" || kind == "uniform") {
    if (args.size() != 2) throw Error(ErrorCode::InvalidSpec, key + ": two arguments expected");
    g.kind = kind == "normal" ? CovariateGen::Kind::Normal : CovariateGen::Kind::Uniform;
    g.a = number(key, args[0]);
    g.b = number(key, args[1]);
  } else {
    throw Error(ErrorCode::InvalidSpec, key + ": unknown generator '" + kind + "'");
  }
  return g;
}

}  // namespace

SimulationSpec parse_simulation(const std::string& text, const std::string& source) {
  SimulationSpec sim;
  std::map<std::string, std::string> truth;
  std::string model_text;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = line.substr(0, line.find('#'));
    const auto colon = body.find(':');
    const std::string key = colon == std::string::npos ? "" : trim(body.substr(0, colon));
    const bool sim_key = key.rfind("sim.", 0) == 0;
    const bool truth_key = key.rfind("truth.", 0) == 0;
    if (!sim_key && !truth_key) {
      model_text += line + "\n";
      continue;
    }
    model_text += "\n";   // keep model-config line numbers aligned
    const std::string v = trim(body.substr(colon + 1));
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    try {
      if (truth_key) truth[key.substr(6)] = v;
      else if (key == "sim.n") sim.n = static_cast<std::size_t>(number(key, v));
      else if (key == "sim.visits") {
        const Eigen::VectorXd x = numbers(key, v);
        sim.visits.assign(x.data(), x.data() + x.size());
      }
      else if (key == "sim.visit_jitter") sim.visit_jitter = number(key, v);
      else if (key == "sim.censor_rate") sim.censor_rate = number(key, v);
      else if (key == "sim.admin_time") sim.admin_time = number(key, v);
      else if (key.rfind("sim.covariate.", 0) == 0) sim.covariates.push_back(parse_generator(key.substr(14), v));
      else throw Error(ErrorCode::InvalidSpec, "unknown key '" + key + "'");
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidSpec, where + e.what());
    }
  }
  const Config c = parse_config(model_text, source);
  sim.spec = c.spec;

  auto need = [&](const std::string& k) -> const std::string& {
    auto it = truth.find(k);
    if (it == truth.end()) throw Error(ErrorCode::InvalidSpec, source + ": missing truth." + k);
    return it->second;
  };
  Params& th = sim.truth;
  th.beta = numbers("truth.beta", need("beta"));
  th.sigma2 = truth.count("sigma2") ? number("truth.sigma2", truth["sigma2"]) : 1.0;
  th.gamma = truth.count("gamma") ? numbers("truth.gamma", truth["gamma"]) : Eigen::VectorXd(0);
  th.alpha = numbers("truth.alpha", need("alpha"));
  th.gammas_h0 = numbers("truth.gammas_h0", need("gammas_h0"));
  if (truth.count("D")) {
    const auto rows = split(truth["D"], ';');
    const auto n = static_cast<Eigen::Index>(rows.size());
    th.D.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::VectorXd x = numbers("truth.D", rows[static_cast<std::size_t>(r)]);
      if (x.size() != n) throw Error(ErrorCode::InvalidSpec, source + ": truth.D must be square");
      th.D.row(r) = x.transpose();
    }
  } else {
    th.D.resize(0, 0);
  }
  for (const auto& [k, v] : truth)
    if (k != "beta" && k != "sigma2" && k != "gamma" && k != "alpha" && k != "gammas_h0" && k != "D")
      throw Error(ErrorCode::InvalidSpec, source + ": unknown key 'truth." + k + "'");
  double horizon = std::isfinite(sim.admin_time) ? sim.admin_time : 0.0;
  for (double v : sim.visits) horizon = std::max(horizon, v);
  if (!(horizon > 0)) horizon = 1.0;
  sim.baseline_knots = simulation_knots(static_cast<std::size_t>(th.gammas_h0.size()),
                                        sim.spec.baseline_degree, horizon);
  return sim;
}

SimulationSpec load_simulation(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BadValue, "cannot open simulation file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_simulation(ss.str(), path);
}

std::string truth_json(const SimulationSpec& sim, const SimulationResult& r) {
  using json = nlohmann::json;
  auto v = [](const Eigen::VectorXd& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  json D = json::array();
  for (Eigen::Index i = 0; i < sim.truth.D.rows(); ++i) D.push_back(v(sim.truth.D.row(i).transpose()));
  json b = json::array();
  for (Eigen::Index i = 0; i < r.b.rows(); ++i) b.push_back(v(r.b.row(i).transpose()));
  json times = json::array();
  for (double t : r.event_times) times.push_back(std::isfinite(t) ? json(t) : json(nullptr));
  json j = {{"beta", v(sim.truth.beta)},
            {"sigma2", sim.truth.sigma2},
            {"D", D},
            {"gamma", v(sim.truth.gamma)},
            {"alpha", v(sim.truth.alpha)},
            {"gammas_h0", v(sim.truth.gammas_h0)},
            {"b", b},
            {"event_times", times}};
  return j.dump(1) + "\n";
}

}  // namespace jmx
