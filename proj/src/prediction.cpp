#include "jmx/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jmx/error.hpp"
#include "jmx/numeric.hpp"
#include "jmx/survival.hpp"

namespace jmx {

namespace {

double subject_log_joint(const ModelStructure& s, const SubjectData& subj, const Params& th,
                         const RandomEffectsPrior& re, const Eigen::VectorXd& b) {
  const double v = log_density_long_subject(s, subj.longit, th, b) +
                   log_density_event(s, subj, th, b) + re.log_density(b);
  return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

double quantile_of(std::vector<double> v, double p) { return quantile(std::move(v), p); }

Eigen::MatrixXd chol_of(const Eigen::MatrixXd& cov) {
  if (cov.rows() == 0) return cov;
  Eigen::LLT<Eigen::MatrixXd> llt(nearest_pd(cov, 1e-10));
  return llt.matrixL();
}

void check_level(double level) {
  if (!(level > 0 && level < 1)) throw Error(ErrorCode::Usage, "interval level must be in (0, 1)");
}

}  // namespace

RandomEffectsMode random_effects_mode(const ModelStructure& s, const SubjectData& subj,
                                      const Params& theta, const Eigen::VectorXd* start) {
  RandomEffectsMode out;
  const Eigen::Index q = s.q();
  const RandomEffectsPrior re = RandomEffectsPrior::from(theta.D);
  if (!re.valid)
    throw Error(ErrorCode::NonfiniteLogPosterior, "random-effects covariance is not positive definite");
  if (q == 0) {
    out.b = Eigen::VectorXd(0);
    out.neg_hessian = Eigen::MatrixXd(0, 0);
    out.log_joint = subject_log_joint(s, subj, theta, re, out.b);
    out.converged = true;
    return out;
  }
  const Objective f = [&](const Eigen::VectorXd& b) {
    const double v = subject_log_joint(s, subj, theta, re, b);
    return std::isfinite(v) ? -v : 1e300;
  };
  Eigen::VectorXd x0 = start ? *start : Eigen::VectorXd::Zero(q);
  if (!(f(x0) < 1e300)) x0.setZero();
  const MinimizeResult r = minimize_bfgs(f, x0, 300, 1e-8);
  out.b = r.x;
  out.converged = r.converged;
  out.log_joint = -r.value;
  out.neg_hessian = nearest_pd(numeric_hessian(f, r.x), 1e-8);
  return out;
}

double subject_laplace_loglik(const ModelStructure& s, const SubjectData& subj,
                              const Params& theta) {
  const RandomEffectsMode m = random_effects_mode(s, subj, theta);
  const Eigen::Index q = m.b.size();
  if (q == 0) return m.log_joint;
  return m.log_joint + 0.5 * q * kLog2Pi - 0.5 * log_det_spd(m.neg_hessian);
}

double last_measurement(const RawSubject& raw) {
  if (raw.times.empty()) return 0.0;
  return *std::max_element(raw.times.begin(), raw.times.end());
}

SubjectData conditioning_data(const ModelStructure& s, const RawSubject& raw, double last_time) {
  if (!(last_time >= 0) || !std::isfinite(last_time))
    throw Error(ErrorCode::InvalidHorizon, "last time must be a finite non-negative number");
  RawSubject r = raw;
  r.times.clear();
  r.y_raw.clear();
  r.censor.clear();
  r.row_cov.clear();
  for (std::size_t k = 0; k < raw.times.size(); ++k) {
    if (raw.times[k] > last_time) continue;
    r.times.push_back(raw.times[k]);
    r.y_raw.push_back(raw.y_raw[k]);
    r.censor.push_back(k < raw.censor.size() ? raw.censor[k] : 0);
    r.row_cov.push_back(raw.row_cov[k]);
  }
  r.T = last_time;
  r.delta = 0;
  JointData jd = prepare_data(s, {r}, DataFingerprint{});
  return std::move(jd.subjects.front());
}

std::vector<double> default_survfit_grid(const ModelStructure& s, double last_time) {
  std::vector<double> out;
  const double lo = s.time_min, hi = s.time_q90 + 0.01;
  for (int k = 0; k < 35; ++k) {
    const double u = lo + (hi - lo) * k / 34.0;
    if (u > last_time) out.push_back(u);
  }
  return out;
}

double conditional_survival_first_order(const ModelStructure& s, const Params& theta,
                                        const SubjectData& cond, double u) {
  if (u < cond.T) throw Error(ErrorCode::InvalidHorizon, "horizon precedes the conditioning time");
  const RandomEffectsMode m = random_effects_mode(s, cond, theta);
  const HazardDesign d = make_interval_design(s, cond.covariates, cond.T, u);
  const double H = cumulative_hazard(s, d, cond.hazard, theta, m.b);
  if (!std::isfinite(H))
    throw Error(ErrorCode::NonfiniteHazard, "cumulative hazard is not finite at t = " + format_number(u));
  return std::exp(-H);
}

SurvfitResult survfit_dynamic(const ModelStructure& s, const Draws& draws, const RawSubject& raw,
                              const SurvfitOptions& opt) {
  check_level(opt.level);
  if (draws.size() == 0) throw Error(ErrorCode::InvalidSpec, "no posterior draws");
  SurvfitResult out;
  out.id = raw.id;
  const double t = opt.last_time ? *opt.last_time : last_measurement(raw);
  out.last_time = t;
  std::vector<double> grid = opt.times.empty() ? default_survfit_grid(s, t) : opt.times;
  for (double u : grid)
    if (!(u >= t) || !std::isfinite(u))
      throw Error(ErrorCode::InvalidHorizon,
                  "prediction time " + format_number(u) + " precedes the last time " + format_number(t));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (!grid.empty() && grid.front() == t) grid.erase(grid.begin());   // the first row already holds u = t

  const SubjectData cond = conditioning_data(s, raw, t);
  std::vector<HazardDesign> pieces;
  double prev = t;
  for (double u : grid) {
    pieces.push_back(make_interval_design(s, cond.covariates, prev, u));
    prev = u;
  }
  auto survival_path = [&](const Params& th, const Eigen::VectorXd& b, std::vector<double>& S) {
    S.resize(grid.size());
    double H = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      H += cumulative_hazard(s, pieces[k], cond.hazard, th, b);
      if (!std::isfinite(H)) return false;
      S[k] = std::exp(-H);
    }
    return true;
  };

  const Params mean = draws.mean();
  const RandomEffectsMode mode = random_effects_mode(s, cond, mean);
  std::vector<double> first;
  if (!survival_path(mean, mode.b, first))
    throw Error(ErrorCode::NonfiniteHazard, "cumulative hazard is not finite for subject '" + raw.id + "'");

  std::vector<std::vector<double>> sims(grid.size());
  if (opt.simulate && opt.M > 0) {
    Rng rng(opt.seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, draws.size() - 1);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Eigen::Index q = s.q();
    const Eigen::MatrixXd L =
        q > 0 ? chol_of(mode.neg_hessian.inverse()) : Eigen::MatrixXd(0, 0);
    const double scale = q > 0 ? 2.38 / std::sqrt(static_cast<double>(q)) : 0.0;
    int failures = 0;
    std::vector<double> S;
    for (int m = 0; m < opt.M; ++m) {
      const Params th = draws.at(pick(rng));
      const RandomEffectsPrior re = RandomEffectsPrior::from(th.D);
      if (!re.valid) {
        ++failures;
        continue;
      }
      Eigen::VectorXd b = mode.b;
      double cur = subject_log_joint(s, cond, th, re, b);
      for (int k = 0; k < opt.mh_steps && q > 0; ++k) {
        Eigen::VectorXd z(q);
        for (Eigen::Index j = 0; j < q; ++j) z(j) = nd(rng);
        const Eigen::VectorXd prop = b + scale * (L * z);
        const double lt = subject_log_joint(s, cond, th, re, prop);
        if (std::isfinite(lt) && (!std::isfinite(cur) || std::log(unif(rng)) < lt - cur)) {
          b = prop;
          cur = lt;
        }
      }
      if (!survival_path(th, b, S)) {
        ++failures;
        continue;
      }
      for (std::size_t k = 0; k < grid.size(); ++k) sims[k].push_back(S[k]);
    }
    if (failures > 0)
      out.warnings.push_back(std::to_string(failures) + " of " + std::to_string(opt.M) +
                             " Monte Carlo samples skipped (non-finite hazard)");
  }

  out.rows.push_back(SurvfitRow{t, 1.0, 1.0, 1.0, 1.0, 1.0});
  const double lo_p = 0.5 * (1 - opt.level), hi_p = 1 - lo_p;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    SurvfitRow r;
    r.time = grid[k];
    r.first_order = first[k];
    if (!sims[k].empty()) {
      double sum = 0;
      for (double v : sims[k]) sum += v;
      r.mean = sum / static_cast<double>(sims[k].size());
      r.median = quantile_of(sims[k], 0.5);
      r.lower = quantile_of(sims[k], lo_p);
      r.upper = quantile_of(sims[k], hi_p);
    } else {
      r.mean = r.median = r.first_order;
      r.lower = r.upper = std::numeric_limits<double>::quiet_NaN();
    }
    out.rows.push_back(r);
  }
  return out;
}

std::vector<PredictRow> predict_longitudinal(const ModelStructure& s, const Draws& draws,
                                             const RawSubject& raw, const PredictOptions& opt) {
  check_level(opt.level);
  if (draws.size() == 0) throw Error(ErrorCode::InvalidSpec, "no posterior draws");
  const double t = opt.last_time ? *opt.last_time : last_measurement(raw);
  std::vector<double> times = opt.times;
  if (times.empty()) {
    times = raw.times;
    const double hi = std::max(t, s.time_q90);
    for (int k = 0; k <= 20; ++k) times.push_back(hi * k / 20.0);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
  }
  for (double u : times)
    if (!(u >= 0) || !std::isfinite(u))
      throw Error(ErrorCode::InvalidHorizon, "prediction times must be finite and non-negative");

  Covariates cov = raw.covariates;
  if (!raw.row_cov.empty())
    for (const auto& [k, v] : raw.row_cov.back()) cov.emplace(k, v);
  std::vector<Covariates> covs(times.size(), cov);
  const Eigen::MatrixXd X = build_design(s.spec.fixed, s.ctx, times, covs);
  const Eigen::MatrixXd Z = build_design(s.spec.random, s.ctx, times, covs);
  const Eigen::Index n = static_cast<Eigen::Index>(times.size());
  const Eigen::Index q = s.q();
  const bool subject = opt.type == PredictOptions::Type::Subject;

  const Params mean = draws.mean();
  SubjectData cond;
  RandomEffectsMode mode;
  if (subject) {
    cond = conditioning_data(s, raw, t);
    mode = random_effects_mode(s, cond, mean);
  }
  std::vector<PredictRow> out(static_cast<std::size_t>(n));
  Eigen::VectorXd point = X * mean.beta;
  if (subject && q > 0) point += Z * mode.b;
  for (Eigen::Index r = 0; r < n; ++r) {
    out[static_cast<std::size_t>(r)].time = times[static_cast<std::size_t>(r)];
    out[static_cast<std::size_t>(r)].pred = point(r);
    out[static_cast<std::size_t>(r)].lower = out[static_cast<std::size_t>(r)].upper = point(r);
  }
  if (opt.interval == PredictOptions::Interval::None) return out;

  Rng rng(opt.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, draws.size() - 1);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool pred_int = opt.interval == PredictOptions::Interval::Prediction;
  const Eigen::MatrixXd L =
      subject && q > 0 ? chol_of(mode.neg_hessian.inverse()) : Eigen::MatrixXd(0, 0);
  const double scale = q > 0 ? 2.38 / std::sqrt(static_cast<double>(q)) : 0.0;
  std::vector<std::vector<double>> sims(static_cast<std::size_t>(n));
  const int M = std::max(opt.M, 1);
  for (int m = 0; m < M; ++m) {
    const Params th = draws.at(pick(rng));
    Eigen::VectorXd eta = X * th.beta;
    if (subject && q > 0) {
      const RandomEffectsPrior re = RandomEffectsPrior::from(th.D);
      if (!re.valid) continue;
      Eigen::VectorXd b = mode.b;
      double cur = subject_log_joint(s, cond, th, re, b);
      for (int k = 0; k < 5; ++k) {
        Eigen::VectorXd z(q);
        for (Eigen::Index j = 0; j < q; ++j) z(j) = nd(rng);
        const Eigen::VectorXd prop = b + scale * (L * z);
        const double lt = subject_log_joint(s, cond, th, re, prop);
        if (std::isfinite(lt) && (!std::isfinite(cur) || std::log(unif(rng)) < lt - cur)) {
          b = prop;
          cur = lt;
        }
      }
      eta += Z * b;
    } else if (pred_int && q > 0) {
      // marginal prediction interval: add a random-effects draw
      Eigen::LLT<Eigen::MatrixXd> llt(th.D);
      if (llt.info() != Eigen::Success) continue;
      Eigen::VectorXd z(q);
      for (Eigen::Index j = 0; j < q; ++j) z(j) = nd(rng);
      eta += Z * (llt.matrixL() * z);
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      double v = eta(r);
      if (pred_int && s.spec.family.scale_needed()) {
        double e = nd(rng);
        if (s.spec.family.kind == Family::Kind::StudentT) {
          std::student_t_distribution<double> td(s.spec.family.df);
          e = td(rng);
        }
        v += std::sqrt(th.sigma2) * e;
      }
      sims[static_cast<std::size_t>(r)].push_back(v);
    }
  }
  const double lo_p = 0.5 * (1 - opt.level), hi_p = 1 - lo_p;
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (sims[r].empty()) continue;
    out[r].lower = quantile_of(sims[r], lo_p);
    out[r].upper = quantile_of(sims[r], hi_p);
  }
  return out;
}

double subject_marginal_loglik(const ModelStructure& s, const Draws& draws, const RawSubject& raw,
                               double last_time) {
  const SubjectData cond = conditioning_data(s, raw, last_time);
  return subject_laplace_loglik(s, cond, draws.mean());
}

std::vector<double> bma_weights(const std::vector<double>& loglik,
                                const std::vector<double>& prior) {
  if (loglik.empty()) throw Error(ErrorCode::Usage, "no models to weight");
  if (!prior.empty() && prior.size() != loglik.size())
    throw Error(ErrorCode::Usage, "prior weights do not match the number of models");
  std::vector<double> lw(loglik.size());
  for (std::size_t k = 0; k < lw.size(); ++k) {
    const double pk = prior.empty() ? 1.0 : prior[k];
    if (!(pk >= 0)) throw Error(ErrorCode::Usage, "prior weights must be non-negative");
    lw[k] = (pk > 0 ? std::log(pk) : -std::numeric_limits<double>::infinity()) + loglik[k];
  }
  const double lse = log_sum_exp(std::span<const double>(lw));
  if (!std::isfinite(lse)) throw Error(ErrorCode::BadValue, "model weights are not finite");
  std::vector<double> w(lw.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(lw[k] - lse);
  return w;
}

SurvfitResult bma_combine(const std::vector<SurvfitResult>& results,
                          const std::vector<double>& weights) {
  if (results.empty() || results.size() != weights.size())
    throw Error(ErrorCode::Usage, "bma_combine needs one weight per result");
  SurvfitResult out = results.front();
  for (const auto& r : results) {
    if (r.rows.size() != out.rows.size())
      throw Error(ErrorCode::Usage, "survfit results are on different grids");
    for (std::size_t k = 0; k < r.rows.size(); ++k)
      if (std::abs(r.rows[k].time - out.rows[k].time) > 1e-12)
        throw Error(ErrorCode::Usage, "survfit results are on different grids");
  }
  for (std::size_t k = 0; k < out.rows.size(); ++k) {
    SurvfitRow acc{out.rows[k].time, 0, 0, 0, 0, 0};
    for (std::size_t m = 0; m < results.size(); ++m) {
      const auto& r = results[m].rows[k];
      acc.mean += weights[m] * r.mean;
      acc.median += weights[m] * r.median;
      acc.lower += weights[m] * r.lower;
      acc.upper += weights[m] * r.upper;
      acc.first_order += weights[m] * r.first_order;
    }
    out.rows[k] = acc;
  }
  out.warnings.clear();
  for (const auto& r : results)
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  return out;
}

}  // namespace jmx
