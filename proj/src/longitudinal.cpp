#include "jmx/longitudinal.hpp"

#include <cmath>
#include <numbers>

#include "jmx/error.hpp"
#include "jmx/numeric.hpp"
#include "jmx/table.hpp"

namespace jmx {

Family Family::parse(const std::string& text) {
  Family f;
  std::string s;
  for (char c : text)
    if (c != ' ') s.push_back(c);
  auto arg = [&](const std::string& head) -> std::string {
    if (s.size() > head.size() + 2 && s.compare(0, head.size() + 1, head + "(") == 0 &&
        s.back() == ')')
      return s.substr(head.size() + 1, s.size() - head.size() - 2);
    return {};
  };
  if (s == "gaussian" || s == "normal") {
    f.kind = Kind::Gaussian;
  } else if (s == "student-t" || !arg("student-t").empty()) {
    f.kind = Kind::StudentT;
    const std::string a = arg("student-t");
    if (!a.empty()) {
      double df = 0;
      if (!parse_number(a, df) || df != static_cast<int>(df))
        throw Error(ErrorCode::InvalidSpec, "student-t df must be an integer");
      f.df = static_cast<int>(df);
    }
    if (f.df < 3) throw Error(ErrorCode::InvalidSpec, "student-t df must be >= 3");
  } else if (s == "binomial-logit" || s == "binomial") {
    f.kind = Kind::BinomialLogit;
  } else if (s == "binomial-probit") {
    f.kind = Kind::BinomialProbit;
  } else if (s == "censored-gaussian" || !arg("censored-gaussian").empty()) {
    f.kind = Kind::CensoredGaussian;
    f.censor_column = arg("censored-gaussian");
  } else {
    throw Error(ErrorCode::InvalidSpec, "unknown family '" + text + "'");
  }
  return f;
}

std::string Family::name() const {
  switch (kind) {
    case Kind::Gaussian: return "gaussian";
    case Kind::StudentT: return "student-t(" + std::to_string(df) + ")";
    case Kind::BinomialLogit: return "binomial-logit";
    case Kind::BinomialProbit: return "binomial-probit";
    case Kind::CensoredGaussian:
      return censor_column.empty() ? "censored-gaussian"
                                   : "censored-gaussian(" + censor_column + ")";
  }
  return "gaussian";
}

double log_density_long(double y, double eta, double scale, const Family& family, int censor) {
  switch (family.kind) {
    case Family::Kind::Gaussian: {
      const double z = (y - eta) / scale;
      return -0.5 * kLog2Pi - std::log(scale) - 0.5 * z * z;
    }
    case Family::Kind::StudentT: {
      const double nu = family.df;
      const double z = (y - eta) / scale;
      return std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) -
             0.5 * std::log(nu * std::numbers::pi) - std::log(scale) -
             0.5 * (nu + 1) * std::log1p(z * z / nu);
    }
    case Family::Kind::BinomialLogit: {
      if (y != 0.0 && y != 1.0)
        throw Error(ErrorCode::BadValue, "binomial response must be 0 or 1");
      // y*eta - log(1 + e^eta), evaluated without overflow
      const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
      return y * eta - softplus;
    }
    case Family::Kind::BinomialProbit: {
      if (y != 0.0 && y != 1.0)
        throw Error(ErrorCode::BadValue, "binomial response must be 0 or 1");
      return y == 1.0 ? log_normal_cdf(eta) : log_normal_cdf(-eta);
    }
    case Family::Kind::CensoredGaussian: {
      const double z = (y - eta) / scale;
      if (censor) return log_normal_cdf(z);
      return -0.5 * kLog2Pi - std::log(scale) - 0.5 * z * z;
    }
  }
  return 0.0;
}

namespace {

struct WeightedOptions {
  bool estimate_dispersion = true;
  double dispersion = 1.0;
  double ridge = 0.0;
  int max_iter = 500;
  double tol = 1e-8;
};

// Weighted linear mixed model y_i ~ N(X b + Z b_i, s2 W_i^{-1}), fitted by EM.
MixedFit weighted_lmm(const std::vector<LongitudinalBlock>& data,
                      const std::vector<Eigen::VectorXd>& weights, const WeightedOptions& opt,
                      const MixedFit* start) {
  const std::size_t n = data.size();
  if (n == 0) throw Error(ErrorCode::EmptyTable, "mixed model: no subjects");
  const Eigen::Index p = data.front().X.cols();
  const Eigen::Index q = data.front().Z.cols();
  if (q > 0 && static_cast<Eigen::Index>(n) < q)
    throw Error(ErrorCode::SingularDesign, "fewer subjects than random effects");

  Eigen::MatrixXd XtWX = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd XtWy = Eigen::VectorXd::Zero(p);
  Eigen::Index N = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = data[i];
    const auto& w = weights[i];
    XtWX += d.X.transpose() * w.asDiagonal() * d.X;
    XtWy += d.X.transpose() * w.asDiagonal() * d.y;
    N += d.y.size();
  }
  Eigen::MatrixXd XtWX_pen = XtWX;
  XtWX_pen.diagonal().array() += opt.ridge;
  Eigen::LDLT<Eigen::MatrixXd> xfac(XtWX_pen);
  if (xfac.info() != Eigen::Success || p == 0 ||
      xfac.vectorD().minCoeff() <= 1e-12 * std::max(1.0, xfac.vectorD().maxCoeff()))
    throw Error(ErrorCode::SingularDesign, "fixed-effects design is rank deficient");

  MixedFit fit;
  if (start) {
    fit = *start;
  } else {
    fit.beta = xfac.solve(XtWy);
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd r = data[i].y - data[i].X * fit.beta;
      rss += r.dot(weights[i].asDiagonal() * r);
    }
    fit.sigma2 = opt.estimate_dispersion ? rss / std::max<Eigen::Index>(1, N) : opt.dispersion;
    fit.D = Eigen::MatrixXd::Identity(q, q) * std::max(0.5 * rss / std::max<Eigen::Index>(1, N), 1e-4);
    fit.b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), q);
  }
  if (!opt.estimate_dispersion) fit.sigma2 = opt.dispersion;

  auto marginal_loglik = [&](const MixedFit& f) {
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = data[i];
      Eigen::MatrixXd V = d.Z * f.D * d.Z.transpose();
      V.diagonal() += (f.sigma2 * weights[i].array().inverse()).matrix();
      Eigen::LLT<Eigen::MatrixXd> llt(V);
      if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      const Eigen::VectorXd r = d.y - d.X * f.beta;
      const Eigen::VectorXd a = llt.matrixL().solve(r);
      ll += -0.5 * d.y.size() * kLog2Pi -
            llt.matrixL().toDenseMatrix().diagonal().array().log().sum() - 0.5 * a.squaredNorm();
    }
    return ll - 0.5 * opt.ridge * f.beta.squaredNorm();
  };

  auto e_step = [&](MixedFit& f) {
    f.b.resize(static_cast<Eigen::Index>(n), q);
    f.b_cov.assign(n, Eigen::MatrixXd());
    if (q == 0) return;
    Eigen::LLT<Eigen::MatrixXd> dllt(f.D);
    const Eigen::MatrixXd Dinv = dllt.solve(Eigen::MatrixXd::Identity(q, q));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = data[i];
      const auto& w = weights[i];
      Eigen::MatrixXd prec = d.Z.transpose() * w.asDiagonal() * d.Z / f.sigma2 + Dinv;
      Eigen::LLT<Eigen::MatrixXd> pl(prec);
      f.b_cov[i] = pl.solve(Eigen::MatrixXd::Identity(q, q));
      f.b.row(static_cast<Eigen::Index>(i)) =
          (f.b_cov[i] * (d.Z.transpose() * w.asDiagonal() * (d.y - d.X * f.beta)) / f.sigma2)
              .transpose();
    }
  };

  double ll = marginal_loglik(fit);
  fit.loglik_trace = {ll};
  fit.monotone = true;
  fit.converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    e_step(fit);
    // M-step: beta, then dispersion and D from the same sufficient statistics
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = data[i];
      Eigen::VectorXd yb = d.y;
      if (q > 0) yb -= d.Z * fit.b.row(static_cast<Eigen::Index>(i)).transpose();
      rhs += d.X.transpose() * weights[i].asDiagonal() * yb;
    }
    MixedFit next = fit;
    next.beta = xfac.solve(rhs);
    double ss = 0;
    Eigen::MatrixXd Dsum = Eigen::MatrixXd::Zero(q, q);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = data[i];
      const auto& w = weights[i];
      Eigen::VectorXd r = d.y - d.X * next.beta;
      if (q > 0) {
        const Eigen::VectorXd bi = fit.b.row(static_cast<Eigen::Index>(i)).transpose();
        r -= d.Z * bi;
        ss += (d.Z.transpose() * w.asDiagonal() * d.Z * fit.b_cov[i]).trace();
        Dsum += bi * bi.transpose() + fit.b_cov[i];
      }
      ss += r.dot(w.asDiagonal() * r);
    }
    if (opt.estimate_dispersion) next.sigma2 = std::max(ss / N, 1e-300);
    if (q > 0) {
      next.D = Dsum / static_cast<double>(n);
      next.D = 0.5 * (next.D + next.D.transpose());
      Eigen::LLT<Eigen::MatrixXd> chk(next.D);
      if (chk.info() != Eigen::Success) next.D = nearest_pd(next.D, 1e-8);
    }
    const double ll_next = marginal_loglik(next);
    fit.iterations = it + 1;
    if (ll_next < ll - 1e-7 * std::max(1.0, std::abs(ll))) fit.monotone = false;
    next.iterations = fit.iterations;
    next.monotone = fit.monotone;
    next.loglik_trace = std::move(fit.loglik_trace);
    next.loglik_trace.push_back(ll_next);
    const double change = std::abs(ll_next - ll) / std::max(1.0, std::abs(ll));
    fit = std::move(next);
    ll = ll_next;
    if (change < opt.tol) {
      fit.converged = true;
      break;
    }
  }
  e_step(fit);
  fit.loglik = ll;

  // covariance of beta-hat: (sum X' V^{-1} X + ridge)^{-1}
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = data[i];
    Eigen::MatrixXd V = d.Z * fit.D * d.Z.transpose();
    V.diagonal() += (fit.sigma2 * weights[i].array().inverse()).matrix();
    info += d.X.transpose() * V.llt().solve(d.X);
  }
  info.diagonal().array() += opt.ridge;
  fit.beta_cov = nearest_pd(info.inverse());
  return fit;
}

}  // namespace

MixedFit fit_lmm_init(const std::vector<LongitudinalBlock>& data, int max_iter, double tol) {
  std::vector<Eigen::VectorXd> w;
  w.reserve(data.size());
  for (const auto& d : data) w.push_back(Eigen::VectorXd::Ones(d.y.size()));

  // perfect fit: EM would divide by a vanishing residual variance
  {
    const Eigen::Index p = data.empty() ? 0 : data.front().X.cols();
    Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd Xty = Eigen::VectorXd::Zero(p);
    double yy = 0;
    Eigen::Index N = 0;
    for (const auto& d : data) {
      XtX += d.X.transpose() * d.X;
      Xty += d.X.transpose() * d.y;
      yy += d.y.squaredNorm();
      N += d.y.size();
    }
    Eigen::LDLT<Eigen::MatrixXd> f(XtX);
    if (p > 0 && f.info() == Eigen::Success &&
        f.vectorD().minCoeff() > 1e-12 * std::max(1.0, f.vectorD().maxCoeff())) {
      const Eigen::VectorXd beta = f.solve(Xty);
      double rss = 0;
      for (const auto& d : data) rss += (d.y - d.X * beta).squaredNorm();
      if (rss <= 1e-24 * std::max(1.0, yy)) {
        const Eigen::Index q = data.front().Z.cols();
        MixedFit fit;
        fit.beta = beta;
        fit.sigma2 = std::max(rss / std::max<Eigen::Index>(N, 1), 1e-300);
        fit.D = Eigen::MatrixXd::Identity(q, q) * 1e-8;
        fit.b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.size()), q);
        fit.b_cov.assign(data.size(), Eigen::MatrixXd::Identity(q, q) * 1e-8);
        fit.beta_cov = Eigen::MatrixXd::Identity(p, p) * 1e-12;
        fit.converged = true;
        fit.loglik = std::numeric_limits<double>::infinity();
        return fit;
      }
    }
  }

  WeightedOptions opt;
  opt.max_iter = max_iter;
  opt.tol = tol;
  return weighted_lmm(data, w, opt, nullptr);
}

MixedFit fit_glmm_init(const std::vector<LongitudinalBlock>& data, const Family& family,
                       int max_outer) {
  if (!family.binary()) throw Error(ErrorCode::InvalidSpec, "fit_glmm_init needs a binary family");
  for (const auto& d : data)
    for (Eigen::Index k = 0; k < d.y.size(); ++k)
      if (d.y(k) != 0.0 && d.y(k) != 1.0)
        throw Error(ErrorCode::BadValue, "binomial response must be 0 or 1");

  const bool logit = family.kind == Family::Kind::BinomialLogit;
  auto mean_and_deriv = [&](double eta, double& mu, double& dmu) {
    if (logit) {
      mu = 1.0 / (1.0 + std::exp(-eta));
      dmu = mu * (1 - mu);
    } else {
      mu = normal_cdf(eta);
      dmu = std::exp(-0.5 * eta * eta) / std::sqrt(2 * std::numbers::pi);
    }
    mu = std::clamp(mu, 1e-10, 1 - 1e-10);
    dmu = std::max(dmu, 1e-10);
  };

  WeightedOptions opt;
  opt.estimate_dispersion = false;
  opt.dispersion = 1.0;
  opt.max_iter = 50;
  opt.tol = 1e-6;

  const std::size_t n = data.size();
  const Eigen::Index q = n ? data.front().Z.cols() : 0;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(n ? data.front().X.cols() : 0);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), q);
  MixedFit fit;
  bool have = false;
  bool separation = false;
  for (int outer = 0; outer < max_outer; ++outer) {
    std::vector<LongitudinalBlock> work(n);
    std::vector<Eigen::VectorXd> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = data[i];
      work[i] = d;
      w[i].resize(d.y.size());
      Eigen::VectorXd eta = d.X * beta;
      if (q > 0) eta += d.Z * b.row(static_cast<Eigen::Index>(i)).transpose();
      for (Eigen::Index k = 0; k < d.y.size(); ++k) {
        double mu, dmu;
        mean_and_deriv(eta(k), mu, dmu);
        work[i].y(k) = eta(k) + (d.y(k) - mu) / dmu;
        w[i](k) = dmu * dmu / (mu * (1 - mu));
      }
    }
    MixedFit next = weighted_lmm(work, w, opt, have ? &fit : nullptr);
    if (!separation && next.beta.cwiseAbs().maxCoeff() > 15.0) {
      // drifting toward separation: restart with a ridge penalty
      separation = true;
      opt.ridge = 0.01;
      beta.setZero();
      b.setZero();
      have = false;
      continue;
    }
    const double change = (next.beta - beta).cwiseAbs().maxCoeff();
    beta = next.beta;
    b = next.b;
    if (q > 0) {
      // keep D away from zero so the next working fit stays well posed
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(next.D);
      if (es.eigenvalues().minCoeff() < 1e-6) next.D = nearest_pd(next.D) +
                                                       1e-6 * Eigen::MatrixXd::Identity(q, q);
    }
    fit = std::move(next);
    have = true;
    fit.iterations = outer + 1;
    if (change < 1e-6) {
      fit.converged = true;
      break;
    }
  }
  fit.separation = separation;
  fit.sigma2 = 1.0;
  return fit;
}

}  // namespace jmx
