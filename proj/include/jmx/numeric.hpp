#pragma once

// Small numerical helpers shared across modules.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>

#include <Eigen/Dense>

namespace jmx {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return log_sum_exp(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

/// log Phi(z), accurate in the lower tail.
inline double log_normal_cdf(double z) {
  if (z > -5.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  // asymptotic expansion of the Mills ratio
  const double z2 = z * z;
  double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(-z) - 0.5 * kLog2Pi + std::log(series);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Symmetrizes and lifts eigenvalues to at least `floor` (relative to the
/// largest eigenvalue) so that a Cholesky factor exists.
inline Eigen::MatrixXd nearest_pd(const Eigen::MatrixXd& a, double floor = 1e-10) {
  Eigen::MatrixXd s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  Eigen::VectorXd ev = es.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index k = 0; k < ev.size(); ++k) ev(k) = std::max(ev(k), floor * top);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double log_det_spd(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

using Objective = std::function<double(const Eigen::VectorXd&)>;

inline Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(k)));
    xp(k) = x(k) + h;
    xm(k) = x(k) - h;
    g(k) = (f(xp) - f(xm)) / (2.0 * h);
    xp(k) = xm(k) = x(k);
  }
  return g;
}

inline Eigen::MatrixXd numeric_hessian(const Objective& f, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd step(n);
  for (Eigen::Index k = 0; k < n; ++k) step(k) = 1e-4 * std::max(1.0, std::abs(x(k)));
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += step(i);
    xm(i) -= step(i);
    h(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (step(i) * step(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      Eigen::VectorXd a = x, b = x, c = x, d = x;
      a(i) += step(i), a(j) += step(j);
      b(i) += step(i), b(j) -= step(j);
      c(i) -= step(i), c(j) += step(j);
      d(i) -= step(i), d(j) -= step(j);
      h(i, j) = h(j, i) = (f(a) - f(b) - f(c) + f(d)) / (4.0 * step(i) * step(j));
    }
  }
  return h;
}

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// BFGS with backtracking line search and central-difference gradients.
/// Intended for the small (<= ~10 dimensional) problems of this library.
inline MinimizeResult minimize_bfgs(const Objective& f, Eigen::VectorXd x, int max_iter = 200,
                                    double gtol = 1e-7) {
  const Eigen::Index n = x.size();
  MinimizeResult res;
  double fx = f(x);
  if (!std::isfinite(fx)) {
    res.x = x;
    res.value = fx;
    return res;
  }
  Eigen::VectorXd g = numeric_gradient(f, x);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    if (g.lpNorm<Eigen::Infinity>() < gtol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -hinv * g;
    if (dir.dot(g) >= 0) {
      hinv.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    Eigen::VectorXd xn;
    double fn = fx;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = x + step * dir;
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * step * g.dot(dir)) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      res.converged = g.lpNorm<Eigen::Infinity>() < 1e-4 * std::max(1.0, std::abs(fx));
      break;
    }
    const Eigen::VectorXd gn = numeric_gradient(f, xn);
    const Eigen::VectorXd s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      hinv = (I - rho * s * y.transpose()) * hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    const double change = std::abs(fx - fn);
    x = xn;
    fx = fn;
    g = gn;
    if (change < 1e-13 * std::max(1.0, std::abs(fx)) &&
        g.lpNorm<Eigen::Infinity>() < 1e-5 * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace jmx
