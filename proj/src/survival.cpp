#include "jmx/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jmx/error.hpp"
#include "jmx/numeric.hpp"

namespace jmx {

double log_baseline_hazard(double t, const BaselineHazard& bh) {
  if (t < 0) throw Error(ErrorCode::InvalidInterval, "log_baseline_hazard: t < 0");
  const Eigen::VectorXd B = bspline_basis<double>(t, bh.knots);
  if (B.size() != bh.gammas_h0.size())
    throw Error(ErrorCode::InvalidSpec, "baseline coefficients do not match the knot vector");
  return B.dot(bh.gammas_h0);
}

Eigen::MatrixXd difference_penalty(int Q, int order) {
  if (order < 0 || order >= Q) throw Error(ErrorCode::InvalidSpec, "penalty order must be < Q");
  Eigen::MatrixXd Dm = Eigen::MatrixXd::Identity(Q, Q);
  for (int r = 0; r < order; ++r) {
    Eigen::MatrixXd next(Dm.rows() - 1, Q);
    for (Eigen::Index i = 0; i + 1 < Dm.rows(); ++i) next.row(i) = Dm.row(i + 1) - Dm.row(i);
    Dm = std::move(next);
  }
  return Dm.transpose() * Dm;
}

int penalty_rank(int Q, int order) { return Q - order; }

Eigen::MatrixXd association_features(const ModelStructure& s, const HazardDesign& d,
                                     const SubjectHazard& h, const Eigen::VectorXd& beta,
                                     const Eigen::VectorXd& b) {
  const Eigen::Index m = d.size();
  Eigen::MatrixXd F(m, s.n_alpha());
  const auto& as = s.spec.association;
  if (as.shared()) {
    Eigen::VectorXd u = b;
    if (as.kind == AssociationKind::SharedBetasRE)
      for (std::size_t k = 0; k < s.random_to_fixed.size(); ++k)
        if (s.random_to_fixed[k] >= 0)
          u(static_cast<Eigen::Index>(k)) += beta(s.random_to_fixed[k]);
    for (Eigen::Index r = 0; r < m; ++r) F.row(r) = u.transpose();
    return F;
  }
  Eigen::Index col = 0;
  auto fill = [&](const Eigen::VectorXd& x, const std::vector<FeatureTerm>& terms) {
    for (const auto& ft : terms) {
      if (ft.power == 1)
        F.col(col) = ft.multiplier * x;
      else
        F.col(col) = ft.multiplier * x.array().pow(ft.power).matrix();
      ++col;
    }
  };
  if (as.uses_value()) fill(d.X * beta + d.Z * b, h.value_terms);
  if (as.uses_extra()) fill(d.Xe * beta + d.Ze * b, h.extra_terms);
  return F;
}

namespace {

// Association contribution alpha' f at every row, without forming F when cheap.
Eigen::VectorXd association_term(const ModelStructure& s, const HazardDesign& d,
                                 const SubjectHazard& h, const Params& th,
                                 const Eigen::VectorXd& b) {
  const Eigen::Index m = d.size();
  const auto& as = s.spec.association;
  if (s.n_alpha() == 0) return Eigen::VectorXd::Zero(m);
  if (as.shared()) {
    double v = th.alpha.dot(b);
    if (as.kind == AssociationKind::SharedBetasRE)
      for (std::size_t k = 0; k < s.random_to_fixed.size(); ++k)
        if (s.random_to_fixed[k] >= 0)
          v += th.alpha(static_cast<Eigen::Index>(k)) * th.beta(s.random_to_fixed[k]);
    return Eigen::VectorXd::Constant(m, v);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
  Eigen::Index col = 0;
  auto add = [&](const Eigen::VectorXd& x, const std::vector<FeatureTerm>& terms) {
    for (const auto& ft : terms) {
      const double a = th.alpha(col++) * ft.multiplier;
      if (a == 0.0) continue;
      if (ft.power == 1)
        out += a * x;
      else if (ft.power == 2)
        out += a * x.cwiseAbs2();
      else
        out += a * x.array().pow(ft.power).matrix();
    }
  };
  if (as.uses_value()) add(d.X * th.beta + d.Z * b, h.value_terms);
  if (as.uses_extra()) add(d.Xe * th.beta + d.Ze * b, h.extra_terms);
  return out;
}

}  // namespace

Eigen::VectorXd log_hazard(const ModelStructure& s, const HazardDesign& d,
                           const SubjectHazard& h, const Params& th, const Eigen::VectorXd& b) {
  Eigen::VectorXd lh = d.Bs * th.gammas_h0;
  if (h.w.size() > 0) lh.array() += h.w.dot(th.gamma);
  lh += association_term(s, d, h, th, b);
  return lh;
}

double cumulative_hazard(const ModelStructure& s, const HazardDesign& d, const SubjectHazard& h,
                         const Params& th, const Eigen::VectorXd& b) {
  if (d.size() == 0) return 0.0;
  return d.weight.dot(log_hazard(s, d, h, th, b).array().exp().matrix());
}

double survival_function(const ModelStructure& s, const Covariates& cov, const Params& th,
                         const Eigen::VectorXd& b, double t) {
  if (t < 0) throw Error(ErrorCode::InvalidInterval, "survival_function: t < 0");
  if (t == 0) return 1.0;
  const HazardDesign d = make_interval_design(s, cov, 0.0, t);
  const SubjectHazard h = make_subject_hazard(s, cov);
  const double H = cumulative_hazard(s, d, h, th, b);
  if (!std::isfinite(H))
    throw Error(ErrorCode::NonfiniteHazard,
                "cumulative hazard is not finite at t = " + format_number(t));
  return std::exp(-H);
}

double log_density_event(const ModelStructure& s, const SubjectData& subj, const Params& th,
                         const Eigen::VectorXd& b) {
  const double H = cumulative_hazard(s, subj.nodes, subj.hazard, th, b);
  double ll = -H;
  if (subj.delta) ll += log_hazard(s, subj.at_T, subj.hazard, th, b)(0);
  if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
  return ll;
}

double log_density_long_subject(const ModelStructure& s, const LongitudinalBlock& blk,
                                const Params& th, const Eigen::VectorXd& b) {
  const Eigen::Index n = blk.y.size();
  if (n == 0) return 0.0;
  Eigen::VectorXd eta = blk.X * th.beta;
  if (b.size() > 0) eta += blk.Z * b;
  const Family& fam = s.spec.family;
  const double sigma = std::sqrt(th.sigma2);
  if (fam.kind == Family::Kind::Gaussian) {
    const double rss = (blk.y - eta).squaredNorm();
    return -0.5 * n * kLog2Pi - n * std::log(sigma) - 0.5 * rss / th.sigma2;
  }
  double ll = 0;
  for (Eigen::Index k = 0; k < n; ++k)
    ll += log_density_long(blk.y(k), eta(k), sigma, fam,
                           blk.censor.empty() ? 0 : blk.censor[static_cast<std::size_t>(k)]);
  return ll;
}

// ---------------------------------------------------------------------------

CoxFit fit_cox(const std::vector<CoxRow>& rows, int max_iter) {
  CoxFit fit;
  if (rows.empty()) throw Error(ErrorCode::EmptyRiskSet, "fit_cox: no rows");
  const Eigen::Index d = rows.front().x.size();
  int n_events = 0;
  for (const auto& r : rows) n_events += r.event;
  if (n_events == 0) throw Error(ErrorCode::EmptyRiskSet, "fit_cox: no events");

  std::vector<int> keep;
  for (Eigen::Index j = 0; j < d; ++j) {
    double mx = 0;
    for (const auto& r : rows) mx = std::max(mx, std::abs(r.x(j)));
    if (mx < 1e-12)
      fit.dropped.push_back(static_cast<int>(j));
    else
      keep.push_back(static_cast<int>(j));
  }
  const Eigen::Index k = static_cast<Eigen::Index>(keep.size());
  std::vector<Eigen::VectorXd> X(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    X[i].resize(k);
    for (Eigen::Index j = 0; j < k; ++j) X[i](j) = rows[i].x(keep[j]);
  }
  std::vector<double> event_times;
  for (const auto& r : rows)
    if (r.event) event_times.push_back(r.stop);
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  auto evaluate = [&](const Eigen::VectorXd& coef, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    double ll = 0;
    if (grad) grad->setZero(k);
    if (hess) hess->setZero(k, k);
    std::vector<double> lp(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) lp[i] = k ? X[i].dot(coef) : 0.0;
    for (double tau : event_times) {
      double S0 = 0;
      Eigen::VectorXd S1 = Eigen::VectorXd::Zero(k);
      Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(k, k);
      Eigen::VectorXd xsum = Eigen::VectorXd::Zero(k);
      int dcount = 0;
      double lpsum = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (!(r.start < tau && tau <= r.stop)) continue;
        const double e = std::exp(lp[i]);
        S0 += e;
        if (grad) S1 += e * X[i];
        if (hess) S2.noalias() += e * X[i] * X[i].transpose();
        if (r.event && r.stop == tau) {
          ++dcount;
          lpsum += lp[i];
          xsum += X[i];
        }
      }
      ll += lpsum - dcount * std::log(S0);
      if (grad) *grad += xsum - dcount * S1 / S0;
      if (hess) *hess -= dcount * (S2 / S0 - S1 * S1.transpose() / (S0 * S0));
    }
    return ll;
  };

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd g;
  Eigen::MatrixXd H;
  double ll = evaluate(coef, &g, &H);
  for (int it = 0; it < max_iter && k > 0; ++it) {
    fit.iterations = it + 1;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-H);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0).any()) break;
    Eigen::VectorXd step = ldlt.solve(g);
    double t = 1.0;
    double ll_new = ll;
    Eigen::VectorXd next;
    for (int h = 0; h < 30; ++h) {
      next = coef + t * step;
      ll_new = evaluate(next, nullptr, nullptr);
      if (std::isfinite(ll_new) && ll_new >= ll - 1e-12 * std::abs(ll)) break;
      t *= 0.5;
    }
    const double change = std::abs(ll_new - ll);
    coef = next;
    ll = evaluate(coef, &g, &H);
    if (change < 1e-10 * std::max(1.0, std::abs(ll)) && (t * step).cwiseAbs().maxCoeff() < 1e-6) {
      fit.converged = true;
      break;
    }
  }
  if (k == 0) fit.converged = true;

  fit.coef = Eigen::VectorXd::Zero(d);
  fit.cov = Eigen::MatrixXd::Identity(d, d) * 0.01;
  if (!fit.converged) {
    // Newton stalling on a flattening likelihood with a runaway coefficient
    fit.monotone = k > 0 && coef.cwiseAbs().maxCoeff() > 5.0;
    fit.fallback = true;
    fit.loglik = evaluate(Eigen::VectorXd::Zero(k), nullptr, nullptr);
    return fit;
  }
  fit.loglik = ll;
  Eigen::MatrixXd cov_k = k ? nearest_pd((-H).inverse(), 1e-10) : Eigen::MatrixXd();
  for (Eigen::Index a = 0; a < k; ++a) {
    fit.coef(keep[a]) = coef(a);
    if (std::abs(coef(a)) > 10.0) fit.monotone = true;
    for (Eigen::Index b = 0; b < k; ++b) fit.cov(keep[a], keep[b]) = cov_k(a, b);
  }
  if (fit.monotone) {
    // a diverging coefficient makes a useless starting point
    for (Eigen::Index a = 0; a < k; ++a)
      if (std::abs(coef(a)) > 10.0) fit.coef(keep[a]) = 0.0;
  }
  return fit;
}

std::vector<CoxRow> expand_start_stop(const ModelStructure& s, const JointData& data,
                                      const Eigen::VectorXd& beta, const Eigen::MatrixXd& b) {
  std::vector<CoxRow> rows;
  const Eigen::Index g = s.n_gamma();
  const Eigen::Index a = s.n_alpha();
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& sd = data.subjects[i];
    const Eigen::VectorXd bi = b.rows() ? Eigen::VectorXd(b.row(static_cast<Eigen::Index>(i)).transpose())
                                        : Eigen::VectorXd();
    std::vector<double> u = sd.times;
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    // start points: 0, then every later distinct measurement time before T
    std::vector<double> starts{0.0};
    std::vector<double> value_at{u.empty() ? 0.0 : u.front()};
    for (std::size_t k = 1; k < u.size(); ++k)
      if (u[k] < sd.T) {
        starts.push_back(u[k]);
        value_at.push_back(u[k]);
      }
    Eigen::MatrixXd F(static_cast<Eigen::Index>(starts.size()), a);
    if (a > 0) {
      Eigen::VectorXd tv = Eigen::Map<Eigen::VectorXd>(value_at.data(),
                                                       static_cast<Eigen::Index>(value_at.size()));
      const HazardDesign hd = make_hazard_design(s, sd.covariates, tv,
                                                 Eigen::VectorXd::Ones(tv.size()));
      F = association_features(s, hd, sd.hazard, beta, bi);
    }
    for (std::size_t k = 0; k < starts.size(); ++k) {
      CoxRow r;
      r.start = starts[k];
      r.stop = k + 1 < starts.size() ? starts[k + 1] : sd.T;
      r.event = k + 1 == starts.size() ? sd.delta : 0;
      r.x.resize(g + a);
      if (g) r.x.head(g) = sd.hazard.w.transpose();
      if (a) r.x.tail(a) = F.row(static_cast<Eigen::Index>(k));
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

CoxFit fit_cox_init(const ModelStructure& s, const JointData& data, const Eigen::VectorXd& beta,
                    const Eigen::MatrixXd& b) {
  const auto rows = expand_start_stop(s, data, beta, b);
  if (s.n_gamma() + s.n_alpha() == 0) {
    CoxFit f;
    f.converged = true;
    return f;
  }
  return fit_cox(rows, 50);
}

BaselineInit fit_baseline_init(const ModelStructure& s, const JointData& data,
                               const Eigen::VectorXd& beta, const Eigen::MatrixXd& b,
                               const CoxFit& cox, double tau_init) {
  const Eigen::Index Q = s.n_h0(), g = s.n_gamma(), a = s.n_alpha();
  const Eigen::Index P = Q + g + a;
  const std::size_t n = data.subjects.size();

  // linear-in-theta design: x = [Bs, w, F] at every node and at T
  std::vector<Eigen::MatrixXd> Xn(n);
  std::vector<Eigen::RowVectorXd> XT(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sd = data.subjects[i];
    const Eigen::VectorXd bi = b.rows() ? Eigen::VectorXd(b.row(static_cast<Eigen::Index>(i)).transpose())
                                        : Eigen::VectorXd();
    auto build = [&](const HazardDesign& hd) {
      Eigen::MatrixXd M(hd.size(), P);
      M.leftCols(Q) = hd.Bs;
      for (Eigen::Index r = 0; r < hd.size(); ++r)
        if (g) M.block(r, Q, 1, g) = sd.hazard.w.transpose();
      if (a) M.rightCols(a) = association_features(s, hd, sd.hazard, beta, bi);
      return M;
    };
    Xn[i] = build(sd.nodes);
    XT[i] = build(sd.at_T).row(0);
  }

  Eigen::MatrixXd prior_prec = Eigen::MatrixXd::Zero(P, P);
  if (s.spec.penalized)
    prior_prec.topLeftCorner(Q, Q) = tau_init * difference_penalty(static_cast<int>(Q), s.spec.penalty_order);
  else
    prior_prec.topLeftCorner(Q, Q).diagonal().setConstant(1.0 / s.spec.prior.v0_h0);
  prior_prec.bottomRightCorner(g + a, g + a).diagonal().setConstant(1.0 / s.spec.prior.v0);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
  for (Eigen::Index j = 0; j < g + a && j < cox.coef.size(); ++j) theta(Q + j) = cox.coef(j);
  // constant baseline that matches the event count given the Cox coefficients
  {
    double expo = 0, events = 0;
    for (std::size_t i = 0; i < n; ++i) {
      events += data.subjects[i].delta;
      const Eigen::VectorXd lp = Xn[i].rightCols(g + a) * theta.tail(g + a);
      expo += data.subjects[i].nodes.weight.dot(lp.array().exp().matrix());
    }
    const double c = std::log(std::max(events, 0.5) / std::max(expo, 1e-300));
    theta.head(Q).setConstant(std::isfinite(c) ? c : 0.0);
  }

  auto objective = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    double ll = -0.5 * th.dot(prior_prec * th);
    if (grad) *grad = -prior_prec * th;
    if (hess) *hess = -prior_prec;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& sd = data.subjects[i];
      const Eigen::VectorXd e = (Xn[i] * th).array().exp().matrix().cwiseProduct(sd.nodes.weight);
      ll -= e.sum();
      if (sd.delta) ll += XT[i].dot(th);
      if (grad) {
        *grad -= Xn[i].transpose() * e;
        if (sd.delta) *grad += XT[i].transpose();
      }
      if (hess) hess->noalias() -= Xn[i].transpose() * e.asDiagonal() * Xn[i];
    }
    return ll;
  };

  BaselineInit out;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  double ll = objective(theta, &grad, &hess);
  for (int it = 0; it < 100; ++it) {
    out.iterations = it + 1;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    double t = 1.0;
    Eigen::VectorXd next;
    double ll_new = ll;
    for (int h = 0; h < 40; ++h) {
      next = theta + t * step;
      ll_new = objective(next, nullptr, nullptr);
      if (std::isfinite(ll_new) && ll_new >= ll - 1e-12 * std::abs(ll)) break;
      t *= 0.5;
    }
    theta = next;
    const double change = std::abs(ll_new - ll);
    ll = objective(theta, &grad, &hess);
    if ((t * step).cwiseAbs().maxCoeff() < 1e-8 || change < 1e-12 * std::max(1.0, std::abs(ll))) {
      out.converged = true;
      break;
    }
  }
  out.gammas_h0 = theta.head(Q);
  out.gamma = theta.segment(Q, g);
  out.alpha = theta.tail(a);
  out.tau_h = tau_init;
  const Eigen::MatrixXd neg = -hess;
  out.h0_cov = nearest_pd(neg.topLeftCorner(Q, Q).inverse(), 1e-10);

  Eigen::VectorXd num = Eigen::VectorXd::Zero(g + a);
  double den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd e =
        (Xn[i] * theta).array().exp().matrix().cwiseProduct(data.subjects[i].nodes.weight);
    num += Xn[i].rightCols(g + a).transpose() * e;
    den += e.sum();
  }
  out.shift = den > 0 ? Eigen::VectorXd(num / den) : Eigen::VectorXd::Zero(g + a);
  return out;
}

}  // namespace jmx
