#include "jmx/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "jmx/error.hpp"
#include "jmx/table.hpp"

namespace jmx {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double as_number(const std::string& key, const std::string& v) {
  double x = 0;
  if (!parse_number(v, x)) throw Error(ErrorCode::InvalidSpec, key + ": '" + v + "' is not a number");
  return x;
}

int as_int(const std::string& key, const std::string& v) {
  const double x = as_number(key, v);
  if (x != static_cast<double>(static_cast<long long>(x)) || std::abs(x) > 2e9)
    throw Error(ErrorCode::InvalidSpec, key + ": '" + v + "' is not an integer");
  return static_cast<int>(x);
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw Error(ErrorCode::InvalidSpec, key + ": expected true or false");
}

std::vector<double> as_numbers(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) out.push_back(as_number(key, item));
  return out;
}

// "2:3" or "2, 3"
std::vector<int> as_indices(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split(v, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      out.push_back(as_int(key, item));
    } else {
      const int a = as_int(key, trim(item.substr(0, colon)));
      const int b = as_int(key, trim(item.substr(colon + 1)));
      if (b < a) throw Error(ErrorCode::InvalidSpec, key + ": empty range");
      for (int k = a; k <= b; ++k) out.push_back(k);
    }
  }
  return out;
}

// "1, 0.2; 0.2, 0.5"
Eigen::MatrixXd as_matrix(const std::string& key, const std::string& v) {
  const auto rows = split(v, ';');
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto vals = as_numbers(key, rows[static_cast<std::size_t>(i)]);
    if (static_cast<Eigen::Index>(vals.size()) != n)
      throw Error(ErrorCode::InvalidSpec, key + ": matrix must be square");
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = vals[static_cast<std::size_t>(j)];
  }
  return m;
}

Eigen::VectorXd as_vector(const std::string& key, const std::string& v) {
  const auto vals = as_numbers(key, v);
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

std::string join_numbers(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::string s;
  for (Eigen::Index k = 0; k < v.size(); ++k) s += (k ? ", " : "") + format_number(v(k));
  return s;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + std::to_string(v[k]);
  return s;
}

}  // namespace

void apply_setting(Config& c, const std::string& key, const std::string& value) {
  ModelSpec& s = c.spec;
  const std::string& v = value;
  if (key == "name") c.name = v;
  else if (key == "id") s.id_col = v;
  else if (key == "time") s.time_col = v;
  else if (key == "response") s.response = ResponseSpec::parse(v);
  else if (key == "event_time") s.event_time_col = v;
  else if (key == "event") s.event_col = v;
  else if (key == "fixed") s.fixed_text = v;
  else if (key == "random") s.random_text = v;
  else if (key == "survival") s.survival_text = v;
  else if (key == "family") s.family = Family::parse(v);
  else if (key == "association") s.association.kind = parse_association(v);
  else if (key == "transform_value") s.association.transform_value = parse_features(v);
  else if (key == "transform_extra") s.association.transform_extra = parse_features(v);
  else if (key == "extra_fixed") c.extra_fixed = v;
  else if (key == "extra_random") c.extra_random = v;
  else if (key == "extra_ind_fixed") c.extra_ind_fixed = as_indices(key, v);
  else if (key == "extra_ind_random") c.extra_ind_random = as_indices(key, v);
  else if (key == "baseline") {
    if (v == "penalized") s.penalized = true;
    else if (v == "unpenalized") s.penalized = false;
    else throw Error(ErrorCode::InvalidSpec, "baseline: expected penalized or unpenalized");
  }
  else if (key == "baseline_basis") s.baseline_basis = as_int(key, v);
  else if (key == "baseline_degree") s.baseline_degree = as_int(key, v);
  else if (key == "penalty_order") s.penalty_order = as_int(key, v);
  else if (key == "quadrature") {
    quadrature_from_name(v);
    s.quadrature = v;
  }
  else if (key == "quadrature_panels") s.quadrature_panels = as_int(key, v);
  else if (key.rfind("levels.", 0) == 0) {
    auto lv = split(v, ',');
    if (lv.empty() || lv.front().empty()) throw Error(ErrorCode::InvalidSpec, key + ": no levels");
    s.levels[key.substr(7)] = lv;
  }
  else if (key == "prior.v0") s.prior.v0 = as_number(key, v);
  else if (key == "prior.v0_h0") s.prior.v0_h0 = as_number(key, v);
  else if (key == "prior.nu0") s.prior.nu0 = as_number(key, v);
  else if (key == "prior.R0") s.prior.R0 = as_number(key, v);
  else if (key == "prior.a0") s.prior.a0 = as_number(key, v);
  else if (key == "prior.b0") s.prior.b0 = as_number(key, v);
  else if (key == "prior.tau_shape") s.prior.tau_shape = as_number(key, v);
  else if (key == "prior.tau_rate") s.prior.tau_rate = as_number(key, v);
  else if (key == "mcmc.n_adapt") s.control.n_adapt = as_int(key, v);
  else if (key == "mcmc.n_batch") s.control.n_batch = as_int(key, v);
  else if (key == "mcmc.n_burnin") s.control.n_burnin = as_int(key, v);
  else if (key == "mcmc.n_iter") s.control.n_iter = as_int(key, v);
  else if (key == "mcmc.n_keep") s.control.n_keep = as_int(key, v);
  else if (key == "mcmc.seed") s.control.seed = static_cast<std::uint64_t>(as_number(key, v));
  else if (key == "mcmc.shift_move") s.control.shift_move = as_bool(key, v);
  else if (key == "fix.D") s.fixed_params.D = as_matrix(key, v);
  else if (key == "fix.sigma2") s.fixed_params.sigma2 = as_number(key, v);
  else if (key == "fix.alpha") s.fixed_params.alpha = as_vector(key, v);
  else if (key == "fix.gamma") s.fixed_params.gamma = as_vector(key, v);
  else throw Error(ErrorCode::InvalidSpec, "unknown key '" + key + "'");
}

void finalize_config(Config& c) {
  ModelSpec& s = c.spec;
  const bool any_extra = !c.extra_fixed.empty() || !c.extra_random.empty();
  if (any_extra) {
    ExtraForm ef;
    ef.fixed = TermList::parse(c.extra_fixed, s.time_col, true);
    ef.random = TermList::parse(c.extra_random, s.time_col, true);
    ef.ind_fixed = c.extra_ind_fixed;
    ef.ind_random = c.extra_ind_random;
    s.association.extra = ef;
  } else {
    s.association.extra.reset();
  }
  if (s.control.n_iter <= 0 || s.control.n_adapt < 0 || s.control.n_burnin < 0 ||
      s.control.n_keep < 0 || s.control.n_batch <= 0)
    throw Error(ErrorCode::InvalidSpec, "mcmc counts must be non-negative (n_iter, n_batch > 0)");
  if (!(s.prior.v0 > 0) || !(s.prior.v0_h0 > 0) || !(s.prior.R0 > 0) || !(s.prior.a0 > 0) ||
      !(s.prior.b0 > 0) || !(s.prior.tau_shape > 0) || !(s.prior.tau_rate > 0))
    throw Error(ErrorCode::InvalidSpec, "prior variances, scales, shapes and rates must be positive");
  if (s.fixed_params.sigma2 && !(*s.fixed_params.sigma2 > 0))
    throw Error(ErrorCode::InvalidSpec, "fix.sigma2 must be positive");
  s.compile();
}

Config parse_config(const std::string& text, const std::string& source) {
  Config c;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (colon == std::string::npos)
      throw Error(ErrorCode::InvalidSpec, where + "expected 'key: value'");
    const std::string key = trim(line.substr(0, colon));
    const std::string value = trim(line.substr(colon + 1));
    if (key.rfind("sim.", 0) == 0 || key.rfind("truth.", 0) == 0) continue;   // simulation-only keys
    if (!seen.insert(key).second) throw Error(ErrorCode::InvalidSpec, where + "duplicate key '" + key + "'");
    try {
      apply_setting(c, key, value);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidSpec, where + e.what());
    }
  }
  try {
    finalize_config(c);
  } catch (const Error& e) {
    throw Error(e.code() == ErrorCode::InvalidSpec ? ErrorCode::InvalidSpec : e.code(),
                source + ": " + e.what());
  }
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BadValue, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string config_text(const Config& c) {
  const ModelSpec& s = c.spec;
  std::ostringstream o;
  o << "name: " << c.name << "\n";
  o << "id: " << s.id_col << "\n";
  o << "time: " << s.time_col << "\n";
  o << "response: " << s.response.str() << "\n";
  o << "event_time: " << s.event_time_col << "\n";
  o << "event: " << s.event_col << "\n";
  o << "fixed: " << s.fixed_text << "\n";
  o << "random: " << s.random_text << "\n";
  o << "survival: " << s.survival_text << "\n";
  o << "family: " << s.family.name() << "\n";
  o << "association: " << association_name(s.association.kind) << "\n";
  o << "transform_value: " << features_str(s.association.transform_value) << "\n";
  o << "transform_extra: " << features_str(s.association.transform_extra) << "\n";
  if (!c.extra_fixed.empty()) o << "extra_fixed: " << c.extra_fixed << "\n";
  if (!c.extra_random.empty()) o << "extra_random: " << c.extra_random << "\n";
  if (!c.extra_ind_fixed.empty()) o << "extra_ind_fixed: " << join_ints(c.extra_ind_fixed) << "\n";
  if (!c.extra_ind_random.empty()) o << "extra_ind_random: " << join_ints(c.extra_ind_random) << "\n";
  o << "baseline: " << (s.penalized ? "penalized" : "unpenalized") << "\n";
  o << "baseline_basis: " << s.baseline_basis << "\n";
  o << "baseline_degree: " << s.baseline_degree << "\n";
  o << "penalty_order: " << s.penalty_order << "\n";
  o << "quadrature: " << s.quadrature << "\n";
  o << "quadrature_panels: " << s.quadrature_panels << "\n";
  for (const auto& [k, lv] : s.levels) {
    o << "levels." << k << ": ";
    for (std::size_t i = 0; i < lv.size(); ++i) o << (i ? ", " : "") << lv[i];
    o << "\n";
  }
  o << "prior.v0: " << format_number(s.prior.v0) << "\n";
  o << "prior.v0_h0: " << format_number(s.prior.v0_h0) << "\n";
  o << "prior.nu0: " << format_number(s.prior.nu0) << "\n";
  o << "prior.R0: " << format_number(s.prior.R0) << "\n";
  o << "prior.a0: " << format_number(s.prior.a0) << "\n";
  o << "prior.b0: " << format_number(s.prior.b0) << "\n";
  o << "prior.tau_shape: " << format_number(s.prior.tau_shape) << "\n";
  o << "prior.tau_rate: " << format_number(s.prior.tau_rate) << "\n";
  o << "mcmc.n_adapt: " << s.control.n_adapt << "\n";
  o << "mcmc.n_batch: " << s.control.n_batch << "\n";
  o << "mcmc.n_burnin: " << s.control.n_burnin << "\n";
  o << "mcmc.n_iter: " << s.control.n_iter << "\n";
  o << "mcmc.n_keep: " << s.control.n_keep << "\n";
  o << "mcmc.seed: " << s.control.seed << "\n";
  o << "mcmc.shift_move: " << (s.control.shift_move ? "true" : "false") << "\n";
  const FixedParams& fx = s.fixed_params;
  if (fx.D) {
    o << "fix.D: ";
    for (Eigen::Index i = 0; i < fx.D->rows(); ++i)
      o << (i ? "; " : "") << join_numbers(fx.D->row(i).transpose());
    o << "\n";
  }
  if (fx.sigma2) o << "fix.sigma2: " << format_number(*fx.sigma2) << "\n";
  if (fx.alpha) o << "fix.alpha: " << join_numbers(*fx.alpha) << "\n";
  if (fx.gamma) o << "fix.gamma: " << join_numbers(*fx.gamma) << "\n";
  return o.str();
}

}  // namespace jmx
