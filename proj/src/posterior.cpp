#include "jmx/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "jmx/error.hpp"
#include "jmx/numeric.hpp"
#include "jmx/prediction.hpp"
#include "jmx/survival.hpp"

namespace jmx {

DrawTable draw_table(const ModelStructure& s, const Draws& draws) {
  DrawTable t;
  const Eigen::Index K = draws.size();
  std::vector<Eigen::VectorXd> cols;
  auto add = [&](const std::string& name, const std::string& group, const Eigen::VectorXd& v) {
    t.names.push_back(name);
    t.groups.push_back(group);
    cols.push_back(v);
  };
  for (Eigen::Index k = 0; k < s.p(); ++k)
    add(s.fixed_names[static_cast<std::size_t>(k)], "longitudinal", draws.beta.col(k));
  if (s.spec.family.scale_needed()) add("sigma", "longitudinal", draws.sigma2.cwiseSqrt());
  const Eigen::Index q = s.q();
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = j; i < q; ++i)
      add("D[" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + "]", "random-effects",
          draws.D.col(j * q + i));
  for (Eigen::Index k = 0; k < s.n_gamma(); ++k)
    add(s.surv_names[static_cast<std::size_t>(k)], "event", draws.gamma.col(k));
  for (Eigen::Index k = 0; k < s.n_alpha(); ++k)
    add(s.alpha_names[static_cast<std::size_t>(k)], "event", draws.alpha.col(k));
  if (s.spec.penalized) add("tauBs", "event", draws.tau_h);
  for (Eigen::Index k = 0; k < s.n_h0(); ++k)
    add("Bs.gammas" + std::to_string(k + 1), "baseline", draws.gammas_h0.col(k));
  t.values.resize(K, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) t.values.col(static_cast<Eigen::Index>(c)) = cols[c];
  return t;
}

double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index n = x.size();
  if (n < 4) return static_cast<double>(n);
  const Eigen::VectorXd c = x.array() - x.mean();
  const int pmax = static_cast<int>(std::min<Eigen::Index>(20, n - 2));
  std::vector<double> acov(static_cast<std::size_t>(pmax) + 1);
  for (int k = 0; k <= pmax; ++k)
    acov[static_cast<std::size_t>(k)] = c.head(n - k).dot(c.tail(n - k)) / static_cast<double>(n);
  if (!(acov[0] > 0)) return 0.0;

  // Levinson-Durbin recursion, keeping the AIC-best order.
  std::vector<double> phi, best_phi;
  double v = acov[0], best_v = v;
  double best_aic = static_cast<double>(n) * std::log(v);
  for (int p = 1; p <= pmax; ++p) {
    double num = acov[static_cast<std::size_t>(p)];
    for (int j = 1; j < p; ++j)
      num -= phi[static_cast<std::size_t>(j - 1)] * acov[static_cast<std::size_t>(p - j)];
    const double kappa = num / v;
    if (!std::isfinite(kappa) || std::abs(kappa) >= 1.0) break;
    std::vector<double> next(static_cast<std::size_t>(p));
    for (int j = 1; j < p; ++j)
      next[static_cast<std::size_t>(j - 1)] =
          phi[static_cast<std::size_t>(j - 1)] - kappa * phi[static_cast<std::size_t>(p - j - 1)];
    next[static_cast<std::size_t>(p - 1)] = kappa;
    phi = std::move(next);
    v *= 1.0 - kappa * kappa;
    if (!(v > 0)) break;
    const double aic = static_cast<double>(n) * std::log(v) + 2.0 * p;
    if (aic < best_aic) {
      best_aic = aic;
      best_phi = phi;
      best_v = v;
    }
  }
  double sum_phi = 0;
  for (double f : best_phi) sum_phi += f;
  const double s0 = best_v / ((1.0 - sum_phi) * (1.0 - sum_phi));
  return static_cast<double>(n) * acov[0] / s0;
}

std::vector<ParamSummary> summarize(const ModelStructure& s, const Draws& draws, double level) {
  if (!(level > 0 && level < 1)) throw Error(ErrorCode::Usage, "level must be in (0, 1)");
  const DrawTable t = draw_table(s, draws);
  std::vector<ParamSummary> out;
  const Eigen::Index K = t.values.rows();
  for (std::size_t c = 0; c < t.names.size(); ++c) {
    const Eigen::VectorXd x = t.values.col(static_cast<Eigen::Index>(c));
    ParamSummary ps;
    ps.name = t.names[c];
    ps.group = t.groups[c];
    ps.mean = x.mean();
    ps.sd = K > 1 ? std::sqrt((x.array() - ps.mean).square().sum() / static_cast<double>(K - 1)) : 0.0;
    ps.ess = effective_sample_size(x);
    ps.std_err = ps.ess > 0 ? ps.sd / std::sqrt(ps.ess) : 0.0;
    std::vector<double> v(x.data(), x.data() + K);
    ps.lower = quantile(v, 0.5 * (1 - level));
    ps.upper = quantile(v, 1 - 0.5 * (1 - level));
    const double above = static_cast<double>((x.array() > 0).count()) / static_cast<double>(K);
    const double below = static_cast<double>((x.array() < 0).count()) / static_cast<double>(K);
    ps.p_value = std::min(1.0, 2.0 * std::min(above, below));
    out.push_back(ps);
  }
  return out;
}

double lpml(const Eigen::MatrixXd& loglik) {
  const Eigen::Index K = loglik.rows();
  if (K == 0) throw Error(ErrorCode::InvalidSpec, "no posterior draws");
  double total = 0;
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const Eigen::VectorXd neg = -loglik.col(i);
    total += -(log_sum_exp(neg) - std::log(static_cast<double>(K)));
  }
  return total;
}

void dic(const ModelStructure& s, const JointData& data, const Draws& draws, FitStats& out) {
  const Params mean = draws.mean();
  out.deviance_mean = -2.0 * draws.loglik.rowwise().sum().mean();
  double ll = 0;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const Eigen::VectorXd b = s.q() > 0 ? Eigen::VectorXd(draws.b_mean.row(static_cast<Eigen::Index>(i)).transpose())
                                        : Eigen::VectorXd(0);
    const auto& sd = data.subjects[i];
    ll += log_density_long_subject(s, sd.longit, mean, b) + log_density_event(s, sd, mean, b);
  }
  out.deviance_at_mean = -2.0 * ll;
  out.pD = out.deviance_mean - out.deviance_at_mean;
  out.dic = out.deviance_mean + out.pD;
}

namespace {

// Unconstrained coordinates of the sampled parameters and the log Jacobian
// |d theta / d u|.
struct Unconstrained {
  Eigen::VectorXd u;
  double log_jacobian = 0.0;
};

Unconstrained to_unconstrained(const ModelStructure& s, const Params& th) {
  std::vector<double> u;
  double lj = 0;
  const FixedParams& fx = s.spec.fixed_params;
  for (Eigen::Index k = 0; k < th.beta.size(); ++k) u.push_back(th.beta(k));
  if (s.spec.family.scale_needed() && !fx.sigma2) {
    u.push_back(std::log(th.sigma2));
    lj += std::log(th.sigma2);
  }
  const Eigen::Index q = th.D.rows();
  if (q > 0 && !fx.D) {
    Eigen::LLT<Eigen::MatrixXd> llt(th.D);
    const Eigen::MatrixXd L = llt.matrixL();
    lj += q * std::log(2.0);
    for (Eigen::Index j = 0; j < q; ++j)
      for (Eigen::Index i = j; i < q; ++i) {
        if (i == j) {
          u.push_back(std::log(L(i, i)));
          lj += static_cast<double>(q - i + 1) * std::log(L(i, i));
        } else {
          u.push_back(L(i, j));
        }
      }
  }
  if (!fx.gamma)
    for (Eigen::Index k = 0; k < th.gamma.size(); ++k) u.push_back(th.gamma(k));
  if (!fx.alpha)
    for (Eigen::Index k = 0; k < th.alpha.size(); ++k) u.push_back(th.alpha(k));
  for (Eigen::Index k = 0; k < th.gammas_h0.size(); ++k) u.push_back(th.gammas_h0(k));
  if (s.spec.penalized) {
    u.push_back(std::log(th.tau_h));
    lj += std::log(th.tau_h);
  }
  return {Eigen::Map<Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size())), lj};
}

}  // namespace

double marginal_loglik_laplace(const ModelStructure& s, const JointData& data,
                               const Draws& draws) {
  const Eigen::Index K = draws.size();
  if (K < 2) throw Error(ErrorCode::InvalidSpec, "Laplace approximation needs at least two draws");
  const Params mean = draws.mean();
  double inner = 0;
  for (const auto& sd : data.subjects) inner += subject_laplace_loglik(s, sd, mean);

  const Unconstrained at_mean = to_unconstrained(s, mean);
  const Eigen::Index P = at_mean.u.size();
  Eigen::MatrixXd U(K, P);
  for (Eigen::Index k = 0; k < K; ++k) U.row(k) = to_unconstrained(s, draws.at(k)).u.transpose();
  const Eigen::RowVectorXd mu = U.colwise().mean();
  const Eigen::MatrixXd C = U.rowwise() - mu;
  const Eigen::MatrixXd cov = C.transpose() * C / static_cast<double>(K - 1);
  const double logdet = log_det_spd(nearest_pd(cov, 1e-12));
  const double lp = log_prior(s, mean) + at_mean.log_jacobian;
  return inner + lp + 0.5 * P * kLog2Pi + 0.5 * logdet;
}

FitStats fit_stats(const ModelStructure& s, const JointData& data, const Draws& draws,
                   bool laplace) {
  FitStats st;
  dic(s, data, draws, st);
  st.lpml = lpml(draws.loglik);
  st.marginal_loglik = std::numeric_limits<double>::quiet_NaN();
  if (!laplace) return st;
  try {
    st.marginal_loglik = marginal_loglik_laplace(s, data, draws);
  } catch (const Error&) {
    // left as NaN; reported as unavailable
  }
  return st;
}

std::vector<FittedRow> fitted_and_residuals(const ModelStructure& s, const JointData& data,
                                            const Draws& draws, bool subject) {
  const Params mean = draws.mean();
  const double sigma = std::sqrt(mean.sigma2);
  std::vector<FittedRow> out;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& sd = data.subjects[i];
    Eigen::VectorXd f = sd.longit.X * mean.beta;
    if (subject && s.q() > 0) f += sd.longit.Z * draws.b_mean.row(static_cast<Eigen::Index>(i)).transpose();
    for (Eigen::Index k = 0; k < f.size(); ++k) {
      FittedRow r;
      r.id = sd.id;
      r.time = sd.times[static_cast<std::size_t>(k)];
      r.observed = sd.longit.y(k);
      r.fitted = f(k);
      r.residual = r.observed - r.fitted;
      r.standardized = r.residual / sigma;
      out.push_back(r);
    }
  }
  return out;
}

std::vector<double> martingale_residuals(const ModelStructure& s, const JointData& data,
                                         const Draws& draws) {
  const Params mean = draws.mean();
  std::vector<double> out;
  out.reserve(data.subjects.size());
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& sd = data.subjects[i];
    const Eigen::VectorXd b = s.q() > 0 ? Eigen::VectorXd(draws.b_mean.row(static_cast<Eigen::Index>(i)).transpose())
                                        : Eigen::VectorXd(0);
    out.push_back(sd.delta - cumulative_hazard(s, sd.nodes, sd.hazard, mean, b));
  }
  return out;
}

std::string compare_models(std::vector<ModelComparison> models) {
  if (models.empty()) throw Error(ErrorCode::Usage, "no models to compare");
  for (const auto& m : models)
    if (!(m.fingerprint == models.front().fingerprint))
      throw Error(ErrorCode::FingerprintMismatch,
                  "model '" + m.name + "' was fitted to different data than '" + models.front().name + "'");
  std::stable_sort(models.begin(), models.end(),
                   [](const ModelComparison& a, const ModelComparison& b) { return a.stats.dic < b.stats.dic; });
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << std::left << std::setw(16) << "model" << std::right << std::setw(12) << "DIC" << std::setw(12)
     << "pD" << std::setw(12) << "LPML" << "\n";
  for (const auto& m : models)
    os << std::left << std::setw(16) << m.name << std::right << std::setw(12) << m.stats.dic
       << std::setw(12) << m.stats.pD << std::setw(12) << m.stats.lpml << "\n";
  return os.str();
}

std::vector<double> autocorrelation(const Eigen::Ref<const Eigen::VectorXd>& x, int max_lag) {
  const Eigen::Index n = x.size();
  std::vector<double> out;
  if (n == 0) return out;
  const Eigen::VectorXd c = x.array() - x.mean();
  const double c0 = c.squaredNorm();
  for (int k = 0; k <= max_lag && k < n; ++k)
    out.push_back(c0 > 0 ? c.head(n - k).dot(c.tail(n - k)) / c0 : (k == 0 ? 1.0 : 0.0));
  return out;
}

void gaussian_kde(const Eigen::Ref<const Eigen::VectorXd>& x, int points, std::vector<double>& grid,
                  std::vector<double>& density) {
  grid.clear();
  density.clear();
  const Eigen::Index n = x.size();
  if (n == 0 || points < 2) return;
  std::vector<double> v(x.data(), x.data() + n);
  const double mean = x.mean();
  const double sd = n > 1 ? std::sqrt((x.array() - mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0)) spread = sd > 0 ? sd : (std::abs(mean) > 0 ? 0.1 * std::abs(mean) : 1.0);
  const double bw = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  const double lo = x.minCoeff() - 3 * bw, hi = x.maxCoeff() + 3 * bw;
  const double norm = 1.0 / (static_cast<double>(n) * bw * std::sqrt(2 * std::numbers::pi));
  for (int k = 0; k < points; ++k) {
    const double g = lo + (hi - lo) * k / (points - 1);
    grid.push_back(g);
    density.push_back(norm * ((x.array() - g) / bw).square().unaryExpr([](double z) {
      return std::exp(-0.5 * z);
    }).sum());
  }
}

std::vector<ParameterDiagnostics> diagnostics_export(const ModelStructure& s, const Draws& draws,
                                                     const std::vector<std::string>& names) {
  const DrawTable t = draw_table(s, draws);
  std::vector<ParameterDiagnostics> out;
  for (const auto& want : names)
    if (std::find(t.names.begin(), t.names.end(), want) == t.names.end())
      throw Error(ErrorCode::Usage, "unknown parameter '" + want + "'");
  for (std::size_t c = 0; c < t.names.size(); ++c) {
    if (!names.empty() && std::find(names.begin(), names.end(), t.names[c]) == names.end()) continue;
    const Eigen::VectorXd x = t.values.col(static_cast<Eigen::Index>(c));
    ParameterDiagnostics d;
    d.name = t.names[c];
    d.trace.assign(x.data(), x.data() + x.size());
    d.autocorrelation = autocorrelation(x, 40);
    gaussian_kde(x, 512, d.density_x, d.density_y);
    d.ess = effective_sample_size(x);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace jmx
