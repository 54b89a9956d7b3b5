#include "jmx/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jmx/error.hpp"
#include "jmx/numeric.hpp"

namespace jmx {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double normal_log_prior(const Eigen::VectorXd& x, double v) {
  if (x.size() == 0) return 0.0;
  return -0.5 * x.size() * (kLog2Pi + std::log(v)) - 0.5 * x.squaredNorm() / v;
}

double log_multigamma(double a, int q) {
  double out = 0.25 * q * (q - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < q; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(n);
  for (Eigen::Index k = 0; k < n; ++k) z(k) = nd(rng);
  return z;
}

Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& cov) {
  if (cov.rows() == 0) return cov;
  Eigen::LLT<Eigen::MatrixXd> llt(nearest_pd(cov, 1e-10));
  return llt.matrixL();
}

double nu_of(const PriorSpec& p, Eigen::Index q) {
  return p.nu0 > 0 ? p.nu0 : static_cast<double>(q + 1);
}

}  // namespace

// ---------------------------------------------------------------------------

Params Draws::at(Eigen::Index k) const {
  Params p;
  p.beta = beta.row(k).transpose();
  p.sigma2 = sigma2(k);
  const auto q = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(D.cols()))));
  p.D = Eigen::Map<const Eigen::MatrixXd>(Eigen::RowVectorXd(D.row(k)).data(), q, q);
  p.gamma = gamma.row(k).transpose();
  p.alpha = alpha.row(k).transpose();
  p.gammas_h0 = gammas_h0.row(k).transpose();
  p.tau_h = tau_h(k);
  return p;
}

Params Draws::mean() const {
  Params p;
  p.beta = beta.colwise().mean().transpose();
  p.sigma2 = sigma2.mean();
  const auto q = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(D.cols()))));
  const Eigen::RowVectorXd dm = D.colwise().mean();
  p.D = Eigen::Map<const Eigen::MatrixXd>(dm.data(), q, q);
  p.gamma = gamma.colwise().mean().transpose();
  p.alpha = alpha.colwise().mean().transpose();
  p.gammas_h0 = gammas_h0.colwise().mean().transpose();
  p.tau_h = tau_h.mean();
  return p;
}

// ---------------------------------------------------------------------------

InitState initialize(const ModelStructure& s, const JointData& data) {
  InitState init;
  std::vector<LongitudinalBlock> blocks;
  blocks.reserve(data.subjects.size());
  for (const auto& sd : data.subjects) blocks.push_back(sd.longit);

  const Family& fam = s.spec.family;
  MixedFit mf = fam.binary() ? fit_glmm_init(blocks, fam) : fit_lmm_init(blocks);
  init.provenance["longitudinal"] = fam.binary() ? "glmm-pql" : "lmm-em";
  if (fam.binary() && mf.separation) init.notes.push_back("longitudinal init: ridge fallback after separation");
  if (!mf.converged) init.notes.push_back("longitudinal init did not converge");

  const Eigen::Index p = s.p(), q = s.q();
  init.theta.beta = mf.beta;
  init.theta.sigma2 = fam.scale_needed() ? mf.sigma2 : 1.0;
  init.theta.D = q > 0 ? mf.D : Eigen::MatrixXd(0, 0);
  init.b = q > 0 ? mf.b : Eigen::MatrixXd(data.subjects.size(), 0);
  init.b_cov = mf.b_cov;
  if (init.b_cov.size() != data.subjects.size())
    init.b_cov.assign(data.subjects.size(), Eigen::MatrixXd::Identity(q, q) * 0.01);

  // Proposal for beta given b: the GLS information with b held fixed.
  Eigen::MatrixXd info = Eigen::MatrixXd::Identity(p, p) / s.spec.prior.v0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& blk = blocks[i];
    if (blk.y.size() == 0) continue;
    if (fam.binary()) {
      Eigen::VectorXd eta = blk.X * mf.beta;
      if (q > 0) eta += blk.Z * init.b.row(static_cast<Eigen::Index>(i)).transpose();
      Eigen::VectorXd w(eta.size());
      for (Eigen::Index k = 0; k < eta.size(); ++k) {
        if (fam.kind == Family::Kind::BinomialLogit) {
          const double mu = 1.0 / (1.0 + std::exp(-eta(k)));
          w(k) = std::max(mu * (1 - mu), 1e-6);
        } else {
          const double d = std::exp(-0.5 * eta(k) * eta(k) - 0.5 * kLog2Pi);
          const double mu = std::clamp(normal_cdf(eta(k)), 1e-12, 1 - 1e-12);
          w(k) = std::max(d * d / (mu * (1 - mu)), 1e-6);
        }
      }
      info.noalias() += blk.X.transpose() * w.asDiagonal() * blk.X;
    } else {
      info.noalias() += blk.X.transpose() * blk.X / init.theta.sigma2;
    }
  }
  init.beta_cov = nearest_pd(info.inverse(), 1e-10);

  const FixedParams& fx = s.spec.fixed_params;
  if (fx.D) init.theta.D = *fx.D;
  if (fx.sigma2) init.theta.sigma2 = *fx.sigma2;

  const Eigen::Index g = s.n_gamma(), a = s.n_alpha();
  CoxFit cox;
  if (g + a > 0) {
    cox = fit_cox_init(s, data, init.theta.beta, init.b);
    init.provenance["cox"] = cox.fallback ? "fallback" : "breslow";
    if (cox.monotone) init.notes.push_back("cox init: monotone likelihood, diverging coefficient zeroed");
    if (cox.fallback) init.notes.push_back("cox init did not converge; zero start");
  } else {
    cox.coef = Eigen::VectorXd(0);
    cox.cov = Eigen::MatrixXd(0, 0);
  }
  if (fx.gamma) cox.coef.head(g) = *fx.gamma;
  if (fx.alpha) cox.coef.tail(a) = *fx.alpha;

  BaselineInit bi = fit_baseline_init(s, data, init.theta.beta, init.b, cox);
  init.provenance["baseline"] = s.spec.penalized ? "penalized-newton" : "newton";
  if (!bi.converged) init.notes.push_back("baseline init did not converge");
  init.theta.gammas_h0 = bi.gammas_h0;
  init.theta.gamma = fx.gamma ? *fx.gamma : bi.gamma;
  init.theta.alpha = fx.alpha ? *fx.alpha : bi.alpha;
  init.theta.tau_h = bi.tau_h;
  init.h0_cov = bi.h0_cov;
  init.shift = bi.shift;
  init.gamma_alpha_cov = cox.cov.rows() == g + a ? cox.cov : Eigen::MatrixXd::Identity(g + a, g + a) * 0.01;
  return init;
}

// ---------------------------------------------------------------------------

double log_prior(const ModelStructure& s, const Params& th) {
  const PriorSpec& pr = s.spec.prior;
  double lp = normal_log_prior(th.beta, pr.v0) + normal_log_prior(th.gamma, pr.v0) +
              normal_log_prior(th.alpha, pr.v0);
  const int Q = static_cast<int>(th.gammas_h0.size());
  if (s.spec.penalized) {
    const Eigen::MatrixXd K = difference_penalty(Q, s.spec.penalty_order);
    const int rank = penalty_rank(Q, s.spec.penalty_order);
    lp += 0.5 * rank * (std::log(th.tau_h) - kLog2Pi) -
          0.5 * th.tau_h * th.gammas_h0.dot(K * th.gammas_h0);
    lp += pr.tau_shape * std::log(pr.tau_rate) - std::lgamma(pr.tau_shape) +
          (pr.tau_shape - 1) * std::log(th.tau_h) - pr.tau_rate * th.tau_h;
  } else {
    lp += normal_log_prior(th.gammas_h0, pr.v0_h0);
  }
  if (s.spec.family.scale_needed())
    lp += pr.a0 * std::log(pr.b0) - std::lgamma(pr.a0) - (pr.a0 + 1) * std::log(th.sigma2) -
          pr.b0 / th.sigma2;
  const Eigen::Index q = th.D.rows();
  if (q > 0) {
    // Wishart(nu, R0 I) density of D^{-1}
    const double nu = nu_of(pr, q);
    Eigen::LLT<Eigen::MatrixXd> llt(th.D);
    if (llt.info() != Eigen::Success) return kNegInf;
    const Eigen::MatrixXd W = llt.solve(Eigen::MatrixXd::Identity(q, q));
    const double logdet_W = -log_det_spd(th.D);
    lp += 0.5 * (nu - q - 1) * logdet_W - 0.5 * W.trace() / pr.R0 - 0.5 * nu * q * std::log(2.0) -
          0.5 * nu * q * std::log(pr.R0) - log_multigamma(0.5 * nu, static_cast<int>(q));
  }
  return lp;
}

double subject_log_posterior(const ModelStructure& s, const Params& th,
                             const RandomEffectsPrior& re, const Eigen::VectorXd& b,
                             const SubjectData& subj) {
  return log_density_long_subject(s, subj.longit, th, b) + log_density_event(s, subj, th, b) +
         re.log_density(b);
}

double log_posterior(const ModelStructure& s, const Params& th, const Eigen::MatrixXd& b,
                     const JointData& data) {
  const RandomEffectsPrior re = RandomEffectsPrior::from(th.D);
  if (!re.valid)
    throw Error(ErrorCode::NonfiniteLogPosterior, "random-effects covariance is not positive definite");
  double ll_long = 0, ll_event = 0, ll_re = 0;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const Eigen::VectorXd bi = b.row(static_cast<Eigen::Index>(i)).transpose();
    const auto& sd = data.subjects[i];
    ll_long += log_density_long_subject(s, sd.longit, th, bi);
    ll_event += log_density_event(s, sd, th, bi);
    ll_re += re.log_density(bi);
  }
  const double lp = log_prior(s, th);
  auto check = [](double v, const char* block) {
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonfiniteLogPosterior, std::string("block '") + block + "' is not finite");
  };
  check(ll_long, "longitudinal");
  check(ll_event, "event");
  check(ll_re, "random-effects");
  check(lp, "prior");
  return ll_long + ll_event + ll_re + lp;
}

// ---------------------------------------------------------------------------

MHStep rw_metropolis_block(const Eigen::VectorXd& current, double current_log_target,
                           const std::function<double(const Eigen::VectorXd&)>& log_target,
                           const Eigen::MatrixXd& chol, double scale, Rng& rng) {
  MHStep out{current, current_log_target, false};
  if (current.size() == 0) return out;
  const Eigen::VectorXd prop = current + scale * (chol * standard_normal(current.size(), rng));
  const double lt = log_target(prop);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (std::isfinite(lt) && std::log(unif(rng)) < lt - current_log_target) {
    out.value = prop;
    out.log_target = lt;
    out.accepted = true;
  }
  return out;
}

double slice_update_precision(double sigma2, const std::function<double(double)>& loglik,
                              double a0, double b0, Rng& rng, double width) {
  auto f = [&](double w) {
    const double v = a0 * w - b0 * std::exp(w) + loglik(std::exp(-w));
    return std::isfinite(v) ? v : kNegInf;
  };
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double w0 = -std::log(sigma2);
  const double level = f(w0) + std::log(unif(rng));
  double lo = w0 - width * unif(rng);
  double hi = lo + width;
  for (int k = 0; k < 60 && f(lo) > level; ++k) lo -= width;
  for (int k = 0; k < 60 && f(hi) > level; ++k) hi += width;
  for (int k = 0; k < 200; ++k) {
    const double w = lo + (hi - lo) * unif(rng);
    if (f(w) > level) return std::exp(-w);
    if (w < w0) lo = w; else hi = w;
  }
  return sigma2;
}

Eigen::MatrixXd wishart_draw(double nu, const Eigen::MatrixXd& S, Rng& rng) {
  const Eigen::Index q = S.rows();
  const Eigen::MatrixXd L = chol_lower(S);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(q, q);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < q; ++i) {
    std::chi_squared_distribution<double> chi(nu - static_cast<double>(i));
    A(i, i) = std::sqrt(chi(rng));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = nd(rng);
  }
  const Eigen::MatrixXd LA = L * A;
  return LA * LA.transpose();
}

Eigen::MatrixXd gibbs_wishart_D(const Eigen::MatrixXd& b, double nu0, const Eigen::MatrixXd& R0,
                                Rng& rng) {
  Eigen::MatrixXd scale_inv = R0.inverse() + b.transpose() * b;
  const Eigen::MatrixXd S = nearest_pd(scale_inv.inverse(), 1e-12);
  return wishart_draw(nu0 + static_cast<double>(b.rows()), S, rng);
}

double gibbs_tau_h(const Eigen::VectorXd& g, const Eigen::MatrixXd& K, int rank, double shape,
                   double rate, Rng& rng) {
  std::gamma_distribution<double> gd(shape + 0.5 * rank, 1.0 / (rate + 0.5 * g.dot(K * g)));
  return gd(rng);
}

double adapt_log_scale(double log_scale, double acceptance, double target, int batch_index) {
  return log_scale + (acceptance - target) / std::sqrt(static_cast<double>(std::max(batch_index, 1)));
}

// ---------------------------------------------------------------------------

namespace {

struct Counter {
  long accepted = 0;
  long total = 0;
  void add(bool a) { accepted += a; ++total; }
  double rate() const { return total ? static_cast<double>(accepted) / total : 0.0; }
  void reset() { accepted = total = 0; }
};

struct SubjectCache {
  double ll_long = 0;
  double ll_event = 0;
  Eigen::MatrixXd F_nodes;   // association features at the quadrature nodes
  Eigen::RowVectorXd F_T;    // at T
};

class Sampler {
 public:
  Sampler(const ModelStructure& s, const JointData& data, const InitState& init,
          const MCMCControl& ctl)
      : s_(s), data_(data), ctl_(ctl), th_(init.theta), b_(init.b), rng_(ctl.seed) {
    n_ = data.subjects.size();
    p_ = s.p();
    q_ = s.q();
    g_ = s.n_gamma();
    a_ = s.n_alpha();
    Q_ = s.n_h0();
    const FixedParams& fx = s.spec.fixed_params;
    fix_D_ = fx.D.has_value() || q_ == 0;
    fix_sigma_ = fx.sigma2.has_value() || !s.spec.family.scale_needed();
    for (Eigen::Index k = 0; k < g_; ++k)
      if (!fx.gamma) free_ga_.push_back(k);
    for (Eigen::Index k = 0; k < a_; ++k)
      if (!fx.alpha) free_ga_.push_back(g_ + k);

    L_beta_ = chol_lower(init.beta_cov);
    L_b_.reserve(n_);
    for (const auto& c : init.b_cov) L_b_.push_back(chol_lower(c));
    const Eigen::Index nf = static_cast<Eigen::Index>(free_ga_.size());
    Eigen::MatrixXd ga_cov(nf, nf);
    for (Eigen::Index i = 0; i < nf; ++i)
      for (Eigen::Index j = 0; j < nf; ++j)
        ga_cov(i, j) = init.gamma_alpha_cov(free_ga_[i], free_ga_[j]);
    L_ga_ = chol_lower(ga_cov);
    shift_ = Eigen::VectorXd(nf);
    for (Eigen::Index i = 0; i < nf; ++i)
      shift_(i) = free_ga_[i] < init.shift.size() ? init.shift(free_ga_[i]) : 0.0;
    L_h0_ = chol_lower(init.h0_cov);

    ls_beta_ = std::log(2.38 / std::sqrt(std::max<double>(1, p_)));
    ls_b_.assign(n_, std::log(2.38 / std::sqrt(std::max<double>(1, q_))));
    ls_ga_ = std::log(2.38 / std::sqrt(std::max<double>(1, nf)));
    ls_h0_ = std::log(2.38 / std::sqrt(std::max<double>(1, Q_)));
    acc_b_.assign(n_, Counter{});

    if (s.spec.penalized) {
      K_ = difference_penalty(static_cast<int>(Q_), s.spec.penalty_order);
      rank_ = penalty_rank(static_cast<int>(Q_), s.spec.penalty_order);
    }
    setup_shift_move();

    re_ = RandomEffectsPrior::from(th_.D);
    if (!re_.valid)
      throw Error(ErrorCode::NonfiniteLogPosterior, "initial random-effects covariance is not positive definite");
    cache_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) refresh(i);
    // Diagnose the starting point by block.
    log_posterior(s_, th_, b_, data_);
  }

  Draws run() {
    const int total = ctl_.n_adapt + ctl_.n_burnin + ctl_.n_iter;
    const int thin = std::max(1, ctl_.n_keep > 0 ? ctl_.n_iter / ctl_.n_keep : ctl_.n_iter);
    const int n_keep = ctl_.n_iter / thin;
    Draws d;
    d.thin = thin;
    d.beta.resize(n_keep, p_);
    d.sigma2.resize(n_keep);
    d.D.resize(n_keep, q_ * q_);
    d.gamma.resize(n_keep, g_);
    d.alpha.resize(n_keep, a_);
    d.gammas_h0.resize(n_keep, Q_);
    d.tau_h.resize(n_keep);
    d.loglik.resize(n_keep, static_cast<Eigen::Index>(n_));
    Eigen::MatrixXd b_sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), q_);
    Eigen::MatrixXd b_sq = b_sum;

    int batch = 0;
    int kept = 0;
    const int sample_start = ctl_.n_adapt + ctl_.n_burnin;
    for (int it = 0; it < total; ++it) {
      if (it == sample_start) reset_counters();
      iterate();
      if (it < ctl_.n_adapt && ctl_.n_batch > 0 && (it + 1) % ctl_.n_batch == 0) {
        adapt(++batch);
        reset_counters();
      }
      if (it >= sample_start && (it - sample_start + 1) % thin == 0 && kept < n_keep) {
        d.beta.row(kept) = th_.beta.transpose();
        d.sigma2(kept) = th_.sigma2;
        d.D.row(kept) = Eigen::Map<const Eigen::RowVectorXd>(th_.D.data(), q_ * q_);
        d.gamma.row(kept) = th_.gamma.transpose();
        d.alpha.row(kept) = th_.alpha.transpose();
        d.gammas_h0.row(kept) = th_.gammas_h0.transpose();
        d.tau_h(kept) = th_.tau_h;
        for (std::size_t i = 0; i < n_; ++i)
          d.loglik(kept, static_cast<Eigen::Index>(i)) = cache_[i].ll_long + cache_[i].ll_event;
        b_sum += b_;
        b_sq += b_.cwiseAbs2();
        ++kept;
      }
    }
    if (kept > 0) {
      d.b_mean = b_sum / kept;
      d.b_sd = (b_sq / kept - d.b_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
    } else {
      d.b_mean = b_;
      d.b_sd = Eigen::MatrixXd::Zero(b_.rows(), b_.cols());
    }

    auto report = [&](const std::string& name, const Counter& c) {
      if (c.total == 0) return;
      d.acceptance[name] = c.rate();
      if (c.rate() < 0.1 || c.rate() > 0.6)
        d.warnings.push_back("acceptance rate of block '" + name + "' is " + format_number(c.rate()));
    };
    report("beta", acc_beta_);
    Counter bsum;
    for (const auto& c : acc_b_) {
      bsum.accepted += c.accepted;
      bsum.total += c.total;
    }
    report("b", bsum);
    report("gamma_alpha", acc_ga_);
    report("gammas_h0", acc_h0_);
    if (acc_shift_.total > 0 && !shift_exact_) d.acceptance["shift"] = acc_shift_.rate();
    return d;
  }

 private:
  // -- caches ---------------------------------------------------------------

  Eigen::VectorXd b_row(std::size_t i) const { return b_.row(static_cast<Eigen::Index>(i)).transpose(); }

  void refresh(std::size_t i) {
    const auto& sd = data_.subjects[i];
    const Eigen::VectorXd bi = b_row(i);
    auto& c = cache_[i];
    c.ll_long = log_density_long_subject(s_, sd.longit, th_, bi);
    features(c, sd, th_.beta, bi);
    c.ll_event = event_ll(i, th_, c);
  }

  void features(SubjectCache& c, const SubjectData& sd, const Eigen::VectorXd& beta,
                const Eigen::VectorXd& bi) const {
    if (a_ == 0) return;
    c.F_nodes = association_features(s_, sd.nodes, sd.hazard, beta, bi);
    c.F_T = association_features(s_, sd.at_T, sd.hazard, beta, bi).row(0);
  }

  // Event log-likelihood from cached features; identical to log_density_event.
  double event_ll(std::size_t i, const Params& th) const { return event_ll(i, th, cache_[i]); }

  double event_ll(std::size_t i, const Params& th, const SubjectCache& c) const {
    const auto& sd = data_.subjects[i];
    const double wg = sd.hazard.w.size() > 0 ? sd.hazard.w.dot(th.gamma) : 0.0;
    Eigen::VectorXd lh = sd.nodes.Bs * th.gammas_h0;
    lh.array() += wg;
    if (a_ > 0) lh += c.F_nodes * th.alpha;
    double ll = -sd.nodes.weight.dot(lh.array().exp().matrix());
    if (sd.delta) {
      double lT = sd.at_T.Bs.row(0).dot(th.gammas_h0) + wg;
      if (a_ > 0) lT += c.F_T.dot(th.alpha);
      ll += lT;
    }
    return std::isfinite(ll) ? ll : kNegInf;
  }

  double total_event(const Params& th) const {
    double s = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      s += event_ll(i, th);
      if (!std::isfinite(s)) return kNegInf;
    }
    return s;
  }

  // -- shift move -----------------------------------------------------------

  void setup_shift_move() {
    shift_idx_.clear();
    for (std::size_t k = 0; k < s_.random_to_fixed.size(); ++k)
      if (s_.random_to_fixed[k] >= 0) shift_idx_.push_back(static_cast<Eigen::Index>(k));
    if (!ctl_.shift_move || shift_idx_.empty() || fix_D_) {
      shift_idx_.clear();
      return;
    }
    // The move is exact Gibbs when (beta, b) -> (beta + d, b - d) leaves
    // every linear predictor unchanged; otherwise it is a Metropolis step.
    shift_exact_ = s_.spec.association.kind != AssociationKind::SharedRE;
    auto same = [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
      if (X.rows() == 0 || Z.cols() == 0) return true;
      for (Eigen::Index k : shift_idx_)
        if ((X.col(s_.random_to_fixed[static_cast<std::size_t>(k)]) - Z.col(k)).cwiseAbs().maxCoeff() > 1e-10)
          return false;
      return true;
    };
    for (const auto& sd : data_.subjects) {
      if (!shift_exact_) break;
      shift_exact_ = same(sd.longit.X, sd.longit.Z) && same(sd.nodes.X, sd.nodes.Z) &&
                     same(sd.at_T.X, sd.at_T.Z) && same(sd.nodes.Xe, sd.nodes.Ze) &&
                     same(sd.at_T.Xe, sd.at_T.Ze);
    }
  }

  void shift_move() {
    const Eigen::Index m = static_cast<Eigen::Index>(shift_idx_.size());
    if (m == 0) return;
    const double v0 = s_.spec.prior.v0;
    Eigen::MatrixXd Dinv(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) Dinv(i, j) = re_.D_inv(shift_idx_[i], shift_idx_[j]);
    // Along the orbit (beta + d, b_i - d) the prior parts are Gaussian in d.
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m), bsel(m), beta_sel(m);
    Eigen::MatrixXd full_inv = re_.D_inv;
    for (Eigen::Index k = 0; k < m; ++k)
      beta_sel(k) = th_.beta(s_.random_to_fixed[static_cast<std::size_t>(shift_idx_[k])]);
    for (std::size_t i = 0; i < n_; ++i) {
      const Eigen::VectorXd bi = b_row(i);
      const Eigen::VectorXd gi = full_inv * bi;
      for (Eigen::Index k = 0; k < m; ++k) rhs(k) += gi(shift_idx_[k]);
    }
    const Eigen::MatrixXd prec = static_cast<double>(n_) * Dinv + Eigen::MatrixXd::Identity(m, m) / v0;
    rhs -= beta_sel / v0;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    const Eigen::VectorXd mean = llt.solve(rhs);
    // draw = mean + U^{-1} z where prec = U'U
    const Eigen::VectorXd z = standard_normal(m, rng_);
    const Eigen::VectorXd delta_gibbs =
        mean + llt.matrixU().solve(z);

    if (shift_exact_) {
      apply_shift(delta_gibbs);
      acc_shift_.add(true);
      return;
    }
    // Independence proposal on the orbit from its Gaussian prior part;
    // only the likelihood ratio remains.
    const Params old_th = th_;
    const Eigen::MatrixXd old_b = b_;
    const std::vector<SubjectCache> old_cache = cache_;
    double old_ll = 0;
    for (const auto& c : cache_) old_ll += c.ll_long + c.ll_event;
    apply_shift(delta_gibbs);
    double new_ll = 0;
    for (const auto& c : cache_) new_ll += c.ll_long + c.ll_event;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const bool ok = std::isfinite(new_ll) && std::log(unif(rng_)) < new_ll - old_ll;
    acc_shift_.add(ok);
    if (!ok) {
      th_ = old_th;
      b_ = old_b;
      cache_ = old_cache;
    }
  }

  void apply_shift(const Eigen::VectorXd& delta) {
    for (Eigen::Index k = 0; k < delta.size(); ++k) {
      const Eigen::Index rk = shift_idx_[static_cast<std::size_t>(k)];
      th_.beta(s_.random_to_fixed[static_cast<std::size_t>(rk)]) += delta(k);
      b_.col(rk).array() -= delta(k);
    }
    if (!shift_exact_)
      for (std::size_t i = 0; i < n_; ++i) refresh(i);
  }

  // -- blocks ---------------------------------------------------------------

  void update_beta() {
    const double v0 = s_.spec.prior.v0;
    double cur = normal_log_prior(th_.beta, v0);
    for (const auto& c : cache_) cur += c.ll_long + c.ll_event;
    std::vector<SubjectCache> trial(n_);
    auto target = [&](const Eigen::VectorXd& beta) {
      Params th = th_;
      th.beta = beta;
      double ll = normal_log_prior(beta, v0);
      for (std::size_t i = 0; i < n_; ++i) {
        const auto& sd = data_.subjects[i];
        const Eigen::VectorXd bi = b_row(i);
        auto& c = trial[i];
        c.ll_long = log_density_long_subject(s_, sd.longit, th, bi);
        features(c, sd, beta, bi);
        c.ll_event = event_ll(i, th, c);
        ll += c.ll_long + c.ll_event;
        if (!std::isfinite(ll)) return kNegInf;
      }
      return ll;
    };
    const MHStep st = rw_metropolis_block(th_.beta, cur, target, L_beta_, std::exp(ls_beta_), rng_);
    acc_beta_.add(st.accepted);
    if (st.accepted) {
      th_.beta = st.value;
      cache_ = std::move(trial);
    }
  }

  void update_b() {
    if (q_ == 0) return;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& sd = data_.subjects[i];
      auto& c = cache_[i];
      const Eigen::VectorXd bi = b_row(i);
      const double cur = c.ll_long + c.ll_event + re_.log_density(bi);
      const Eigen::VectorXd prop = bi + std::exp(ls_b_[i]) * (L_b_[i] * standard_normal(q_, rng_));
      const double l_long = log_density_long_subject(s_, sd.longit, th_, prop);
      const double l_event = log_density_event(s_, sd, th_, prop);
      const double lt = l_long + l_event + re_.log_density(prop);
      const bool ok = std::isfinite(lt) && std::log(unif(rng_)) < lt - cur;
      acc_b_[i].add(ok);
      if (ok) {
        b_.row(static_cast<Eigen::Index>(i)) = prop.transpose();
        c.ll_long = l_long;
        c.ll_event = l_event;
        features(c, sd, th_.beta, prop);
      }
    }
  }

  void update_gamma_alpha() {
    const Eigen::Index nf = static_cast<Eigen::Index>(free_ga_.size());
    if (nf == 0) return;
    const double v0 = s_.spec.prior.v0;
    auto pack = [&](const Params& th) {
      Eigen::VectorXd x(nf);
      for (Eigen::Index k = 0; k < nf; ++k)
        x(k) = free_ga_[k] < g_ ? th.gamma(free_ga_[k]) : th.alpha(free_ga_[k] - g_);
      return x;
    };
    auto unpack = [&](Params& th, const Eigen::VectorXd& x) {
      for (Eigen::Index k = 0; k < nf; ++k) {
        if (free_ga_[k] < g_) th.gamma(free_ga_[k]) = x(k);
        else th.alpha(free_ga_[k] - g_) = x(k);
      }
    };
    const Eigen::VectorXd x0 = pack(th_);
    Params trial = th_;
    auto target = [&](const Eigen::VectorXd& x) {
      trial = th_;
      unpack(trial, x);
      // keep the hazard level roughly in place by shifting the baseline
      trial.gammas_h0.array() -= shift_.dot(x - x0);
      return total_event(trial) + normal_log_prior(trial.gamma, v0) +
             normal_log_prior(trial.alpha, v0) + h0_log_prior(trial.gammas_h0, trial.tau_h);
    };
    double cur = 0;
    for (const auto& c : cache_) cur += c.ll_event;
    cur += normal_log_prior(th_.gamma, v0) + normal_log_prior(th_.alpha, v0) +
           h0_log_prior(th_.gammas_h0, th_.tau_h);
    const MHStep st = rw_metropolis_block(x0, cur, target, L_ga_, std::exp(ls_ga_), rng_);
    acc_ga_.add(st.accepted);
    if (st.accepted) {
      th_ = trial;
      for (std::size_t i = 0; i < n_; ++i) cache_[i].ll_event = event_ll(i, th_);
    }
  }

  double h0_log_prior(const Eigen::VectorXd& g, double tau) const {
    if (s_.spec.penalized) return -0.5 * tau * g.dot(K_ * g);
    return normal_log_prior(g, s_.spec.prior.v0_h0);
  }

  void update_h0() {
    Params trial = th_;
    auto target = [&](const Eigen::VectorXd& g) {
      trial.gammas_h0 = g;
      return total_event(trial) + h0_log_prior(g, th_.tau_h);
    };
    double cur = 0;
    for (const auto& c : cache_) cur += c.ll_event;
    cur += h0_log_prior(th_.gammas_h0, th_.tau_h);
    const MHStep st = rw_metropolis_block(th_.gammas_h0, cur, target, L_h0_, std::exp(ls_h0_), rng_);
    acc_h0_.add(st.accepted);
    if (st.accepted) {
      th_.gammas_h0 = st.value;
      for (std::size_t i = 0; i < n_; ++i) cache_[i].ll_event = event_ll(i, th_);
    }
  }

  void update_sigma2() {
    if (fix_sigma_) return;
    const Family& fam = s_.spec.family;
    if (fam.kind == Family::Kind::Gaussian) {
      double rss = 0;
      for (std::size_t i = 0; i < n_; ++i) {
        const auto& blk = data_.subjects[i].longit;
        if (blk.y.size() == 0) continue;
        Eigen::VectorXd e = blk.y - blk.X * th_.beta;
        if (q_ > 0) e -= blk.Z * b_row(i);
        rss += e.squaredNorm();
      }
      const double N = static_cast<double>(data_.n_obs);
      auto ll = [&](double s2) { return -0.5 * N * (kLog2Pi + std::log(s2)) - 0.5 * rss / s2; };
      th_.sigma2 = slice_update_precision(th_.sigma2, ll, s_.spec.prior.a0, s_.spec.prior.b0, rng_);
    } else {
      std::vector<double> y, eta;
      std::vector<int> cens;
      for (std::size_t i = 0; i < n_; ++i) {
        const auto& blk = data_.subjects[i].longit;
        Eigen::VectorXd e = blk.X * th_.beta;
        if (q_ > 0) e += blk.Z * b_row(i);
        for (Eigen::Index k = 0; k < e.size(); ++k) {
          y.push_back(blk.y(k));
          eta.push_back(e(k));
          cens.push_back(blk.censor.empty() ? 0 : blk.censor[static_cast<std::size_t>(k)]);
        }
      }
      auto ll = [&](double s2) {
        const double sd = std::sqrt(s2);
        double out = 0;
        for (std::size_t k = 0; k < y.size(); ++k) out += log_density_long(y[k], eta[k], sd, fam, cens[k]);
        return out;
      };
      th_.sigma2 = slice_update_precision(th_.sigma2, ll, s_.spec.prior.a0, s_.spec.prior.b0, rng_);
    }
    for (std::size_t i = 0; i < n_; ++i)
      cache_[i].ll_long = log_density_long_subject(s_, data_.subjects[i].longit, th_, b_row(i));
  }

  void update_D() {
    if (fix_D_) return;
    const double nu0 = nu_of(s_.spec.prior, q_);
    const Eigen::MatrixXd R0 = Eigen::MatrixXd::Identity(q_, q_) * s_.spec.prior.R0;
    const Eigen::MatrixXd W = gibbs_wishart_D(b_, nu0, R0, rng_);
    Eigen::LLT<Eigen::MatrixXd> llt(W);
    if (llt.info() != Eigen::Success) return;
    th_.D = llt.solve(Eigen::MatrixXd::Identity(q_, q_));
    th_.D = 0.5 * (th_.D + th_.D.transpose());
    RandomEffectsPrior re = RandomEffectsPrior::from(th_.D);
    if (re.valid) re_ = std::move(re);
  }

  void update_tau() {
    if (!s_.spec.penalized) return;
    th_.tau_h = gibbs_tau_h(th_.gammas_h0, K_, rank_, s_.spec.prior.tau_shape, s_.spec.prior.tau_rate, rng_);
  }

  void iterate() {
    update_beta();
    update_b();
    shift_move();
    update_gamma_alpha();
    update_h0();
    update_sigma2();
    update_D();
    update_tau();
  }

  void adapt(int batch) {
    ls_beta_ = adapt_log_scale(ls_beta_, acc_beta_.rate(), target_acceptance(p_), batch);
    for (std::size_t i = 0; i < n_; ++i)
      ls_b_[i] = adapt_log_scale(ls_b_[i], acc_b_[i].rate(), target_acceptance(q_), batch);
    ls_ga_ = adapt_log_scale(ls_ga_, acc_ga_.rate(), target_acceptance(static_cast<Eigen::Index>(free_ga_.size())), batch);
    ls_h0_ = adapt_log_scale(ls_h0_, acc_h0_.rate(), target_acceptance(Q_), batch);
  }

  void reset_counters() {
    acc_beta_.reset();
    for (auto& c : acc_b_) c.reset();
    acc_ga_.reset();
    acc_h0_.reset();
    acc_shift_.reset();
  }

  const ModelStructure& s_;
  const JointData& data_;
  MCMCControl ctl_;
  Params th_;
  Eigen::MatrixXd b_;
  Rng rng_;
  std::size_t n_ = 0;
  Eigen::Index p_ = 0, q_ = 0, g_ = 0, a_ = 0, Q_ = 0;
  bool fix_D_ = false, fix_sigma_ = false;
  std::vector<Eigen::Index> free_ga_;

  Eigen::MatrixXd L_beta_, L_ga_, L_h0_;
  std::vector<Eigen::MatrixXd> L_b_;
  Eigen::VectorXd shift_;
  double ls_beta_ = 0, ls_ga_ = 0, ls_h0_ = 0;
  std::vector<double> ls_b_;
  Counter acc_beta_, acc_ga_, acc_h0_, acc_shift_;
  std::vector<Counter> acc_b_;

  std::vector<Eigen::Index> shift_idx_;
  bool shift_exact_ = false;

  Eigen::MatrixXd K_;
  int rank_ = 0;
  RandomEffectsPrior re_;
  std::vector<SubjectCache> cache_;
};

}  // namespace

Draws run_mcmc(const ModelStructure& s, const JointData& data, const InitState& init,
               const MCMCControl& control) {
  if (control.n_iter <= 0 || control.n_keep < 0 || control.n_adapt < 0 || control.n_burnin < 0)
    throw Error(ErrorCode::InvalidSpec, "MCMC iteration counts must be non-negative and n_iter > 0");
  Sampler sampler(s, data, init, control);
  return sampler.run();
}

}  // namespace jmx
