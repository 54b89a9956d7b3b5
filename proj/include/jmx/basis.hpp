#pragma once

// Spline bases and fixed-order quadrature.
//
// Every function here is pure; the templated evaluators accept any real
// scalar type Eigen understands (double, long double, float).

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "jmx/error.hpp"

namespace jmx {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Knots of a clamped B-spline basis. The basis has
/// `interior.size() + degree + 1` functions.
struct KnotVector {
  std::vector<double> interior;
  double low = 0.0;
  double high = 1.0;
  int degree = 3;

  Eigen::Index size() const { return static_cast<Eigen::Index>(interior.size()) + degree + 1; }

  void validate() const {
    if (!(std::isfinite(low) && std::isfinite(high)) || !(low < high))
      throw Error(ErrorCode::InvalidKnots, "boundary knots must be finite with low < high");
    if (degree < 0) throw Error(ErrorCode::InvalidKnots, "degree must be nonnegative");
    for (std::size_t k = 0; k < interior.size(); ++k) {
      if (!(interior[k] > low && interior[k] < high))
        throw Error(ErrorCode::InvalidKnots, "interior knot outside the boundary");
      if (k > 0 && !(interior[k] > interior[k - 1]))
        throw Error(ErrorCode::InvalidKnots, "interior knots must be strictly increasing");
    }
  }

  /// Boundary knots repeated degree+1 times around the interior ones.
  std::vector<double> augmented() const {
    std::vector<double> aug;
    aug.reserve(interior.size() + 2 * (degree + 1));
    aug.insert(aug.end(), degree + 1, low);
    aug.insert(aug.end(), interior.begin(), interior.end());
    aug.insert(aug.end(), degree + 1, high);
    return aug;
  }
};

/// B-spline basis at t. Values outside [low, high] are evaluated at the
/// nearest boundary.
template <typename Scalar>
VectorX<Scalar> bspline_basis(Scalar t, const KnotVector& knots) {
  knots.validate();
  using std::isnan;
  if (isnan(t)) throw Error(ErrorCode::BadValue, "bspline_basis: t is NaN");
  const int p = knots.degree;
  const Eigen::Index nb = knots.size();
  const std::vector<double> aug = knots.augmented();

  Scalar x = t;
  if (x < Scalar(knots.low)) x = Scalar(knots.low);
  if (x > Scalar(knots.high)) x = Scalar(knots.high);

  // span index s with aug[s] <= x < aug[s+1]; the right end belongs to the last span
  Eigen::Index s = nb - 1;
  if (x < Scalar(knots.high)) {
    auto it = std::upper_bound(aug.begin() + p, aug.begin() + nb + 1, static_cast<double>(x));
    s = static_cast<Eigen::Index>(it - aug.begin()) - 1;
  }

  VectorX<Scalar> local = VectorX<Scalar>::Zero(p + 1);
  VectorX<Scalar> left(p + 1), right(p + 1);
  local(0) = Scalar(1);
  for (int j = 1; j <= p; ++j) {
    left(j) = x - Scalar(aug[s + 1 - j]);
    right(j) = Scalar(aug[s + j]) - x;
    Scalar saved(0);
    for (int r = 0; r < j; ++r) {
      const Scalar temp = local(r) / (right(r + 1) + left(j - r));
      local(r) = saved + right(r + 1) * temp;
      saved = left(j - r) * temp;
    }
    local(j) = saved;
  }

  VectorX<Scalar> out = VectorX<Scalar>::Zero(nb);
  for (int r = 0; r <= p; ++r) out(s - p + r) = local(r);
  return out;
}

namespace detail {

inline void check_natural_knots(int df, std::pair<double, double> boundary,
                                std::span<const double> interior) {
  if (df < 1) throw Error(ErrorCode::InvalidSpec, "natural spline df must be >= 1");
  if (static_cast<std::size_t>(df) != interior.size() + 1)
    throw Error(ErrorCode::InvalidSpec, "natural spline needs exactly df-1 interior knots");
  KnotVector kv{std::vector<double>(interior.begin(), interior.end()), boundary.first,
                boundary.second, 3};
  kv.validate();
}

template <typename Scalar>
Scalar cube_plus(Scalar x) {
  return x > Scalar(0) ? x * x * x : Scalar(0);
}

}  // namespace detail

/// Natural cubic spline basis without intercept: df columns, each zero at the
/// lower boundary, linear beyond both boundaries.
///
/// Built from truncated cubic powers; column 1 is (t - low)/L and columns
/// 2..df are (d_k - d_{K-1})/L^2 with d_k = [(t-k_k)^3_+ - (t-k_K)^3_+]/(k_K - k_k),
/// L = high - low. Only knot differences enter, so the basis is translation
/// equivariant.
template <typename Scalar>
VectorX<Scalar> natural_cubic_basis(Scalar t, int df, std::pair<double, double> boundary,
                                    std::span<const double> interior) {
  detail::check_natural_knots(df, boundary, interior);
  std::vector<double> k;
  k.reserve(interior.size() + 2);
  k.push_back(boundary.first);
  k.insert(k.end(), interior.begin(), interior.end());
  k.push_back(boundary.second);
  const std::size_t K = k.size();
  const double L = boundary.second - boundary.first;

  auto d = [&](std::size_t j) {
    return (detail::cube_plus(t - Scalar(k[j])) - detail::cube_plus(t - Scalar(k[K - 1]))) /
           Scalar(k[K - 1] - k[j]);
  };

  VectorX<Scalar> out(df);
  out(0) = (t - Scalar(k[0])) / Scalar(L);
  const Scalar last = d(K - 2);
  for (std::size_t j = 0; j + 2 < K; ++j) out(j + 1) = (d(j) - last) / Scalar(L * L);
  return out;
}

/// Central-difference step used for spline derivatives.
inline double central_difference_step(double t) { return 1e-5 * std::max(1.0, std::abs(t)); }

template <typename Scalar>
VectorX<Scalar> natural_cubic_deriv(Scalar t, int df, std::pair<double, double> boundary,
                                    std::span<const double> interior) {
  const Scalar h = Scalar(central_difference_step(static_cast<double>(t)));
  return (natural_cubic_basis<Scalar>(t + h, df, boundary, interior) -
          natural_cubic_basis<Scalar>(t - h, df, boundary, interior)) /
         (Scalar(2) * h);
}

// ---------------------------------------------------------------------------
// Quadrature

enum class QuadratureKind { GaussKronrod, GaussLegendre };

/// Fixed rule on the reference interval [-1, 1].
struct QuadratureRule {
  QuadratureKind kind = QuadratureKind::GaussKronrod;
  int points = 15;
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// 7- or 15-point Gauss-Kronrod rule (Kronrod extension of the 3/7-point Gauss rule).
QuadratureRule gauss_kronrod(int points = 15);

/// n-point Gauss-Legendre rule (Newton iteration on the Legendre polynomial).
QuadratureRule gauss_legendre(int points);

/// Parses "gk15", "gk7", "gl<n>".
QuadratureRule quadrature_from_name(const std::string& name);
std::string quadrature_name(const QuadratureRule& rule);

/// Nodes and weights of `rule` mapped onto [a, b], split into `panels` equal panels.
std::pair<Eigen::VectorXd, Eigen::VectorXd> rescaled_rule(const QuadratureRule& rule, double a,
                                                          double b, int panels = 1);

template <typename F>
double integrate(F&& f, double a, double b, const QuadratureRule& rule, int panels = 1) {
  if (!(a <= b)) throw Error(ErrorCode::InvalidInterval, "integrate: a > b");
  if (panels < 1) throw Error(ErrorCode::InvalidSpec, "integrate: panels must be >= 1");
  if (a == b) return 0.0;
  const double width = (b - a) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * width;
    const double half = 0.5 * width;
    const double mid = lo + half;
    double s = 0.0;
    for (Eigen::Index k = 0; k < rule.nodes.size(); ++k)
      s += rule.weights(k) * f(mid + half * rule.nodes(k));
    total += half * s;
  }
  return total;
}

/// Component-wise integral from 0 to t of the natural cubic basis. The
/// interval is split at the knots so each panel integrates a polynomial and
/// GK15 is exact on it.
template <typename Scalar>
VectorX<Scalar> natural_cubic_integral(Scalar t, int df, std::pair<double, double> boundary,
                                       std::span<const double> interior) {
  detail::check_natural_knots(df, boundary, interior);
  if (t < Scalar(0)) throw Error(ErrorCode::InvalidInterval, "natural_cubic_integral: t < 0");
  static const QuadratureRule rule = gauss_kronrod(15);
  std::vector<double> cuts{0.0};
  auto add_cut = [&](double c) {
    if (c > 0.0 && Scalar(c) < t) cuts.push_back(c);
  };
  add_cut(boundary.first);
  for (double c : interior) add_cut(c);
  add_cut(boundary.second);
  std::sort(cuts.begin(), cuts.end());

  VectorX<Scalar> out = VectorX<Scalar>::Zero(df);
  for (std::size_t c = 0; c < cuts.size(); ++c) {
    const Scalar lo = Scalar(cuts[c]);
    const Scalar hi = c + 1 < cuts.size() ? Scalar(cuts[c + 1]) : t;
    if (!(hi > lo)) continue;
    const Scalar half = (hi - lo) / Scalar(2);
    const Scalar mid = lo + half;
    for (Eigen::Index k = 0; k < rule.nodes.size(); ++k)
      out += Scalar(rule.weights(k)) * half *
             natural_cubic_basis<Scalar>(mid + half * Scalar(rule.nodes(k)), df, boundary,
                                         interior);
  }
  return out;
}

/// Knots at equally spaced quantiles of `times`, sized so the basis has
/// `n_basis` functions. Boundary is (0, max*(1+1e-8)) unless `upper` is larger.
KnotVector percentile_knots(std::span<const double> times, int n_basis, int degree = 3,
                            double upper = 0.0);

/// Empirical quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double p);

}  // namespace jmx
