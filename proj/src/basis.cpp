#include "jmx/basis.hpp"

#include <numbers>

namespace jmx {

namespace {

// Positive half of the symmetric Kronrod nodes/weights, largest node first.
constexpr double kGK15Nodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kGK15Weights[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

constexpr double kGK7Nodes[4] = {0.960491268708020283423507092629080,
                                 0.774596669241483377035853079956480,
                                 0.434243749346802558002071502844628, 0.0};
constexpr double kGK7Weights[4] = {0.104656226026467265193823857192073,
                                   0.268488089868333440728569280666710,
                                   0.401397414775962222905051818618432,
                                   0.450916538658474142345110087045571};

QuadratureRule symmetric_rule(const double* half_nodes, const double* half_weights, int half,
                              int points) {
  QuadratureRule rule;
  rule.kind = QuadratureKind::GaussKronrod;
  rule.points = points;
  rule.nodes.resize(points);
  rule.weights.resize(points);
  int k = 0;
  for (int j = 0; j < half - 1; ++j) {
    rule.nodes(k) = -half_nodes[j];
    rule.weights(k++) = half_weights[j];
  }
  rule.nodes(k) = 0.0;
  rule.weights(k++) = half_weights[half - 1];
  for (int j = half - 2; j >= 0; --j) {
    rule.nodes(k) = half_nodes[j];
    rule.weights(k++) = half_weights[j];
  }
  return rule;
}

}  // namespace

QuadratureRule gauss_kronrod(int points) {
  if (points == 15) return symmetric_rule(kGK15Nodes, kGK15Weights, 8, 15);
  if (points == 7) return symmetric_rule(kGK7Nodes, kGK7Weights, 4, 7);
  throw Error(ErrorCode::InvalidSpec, "Gauss-Kronrod rule supports 7 or 15 points");
}

QuadratureRule gauss_legendre(int points) {
  if (points < 1) throw Error(ErrorCode::InvalidSpec, "Gauss-Legendre needs >= 1 point");
  QuadratureRule rule;
  rule.kind = QuadratureKind::GaussLegendre;
  rule.points = points;
  rule.nodes.resize(points);
  rule.weights.resize(points);
  const int n = points;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // recompute derivative at the converged node
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    if (n == 1) p0 = 1.0;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes(i) = -x;
    rule.nodes(n - 1 - i) = x;
    rule.weights(i) = w;
    rule.weights(n - 1 - i) = w;
  }
  if (n % 2 == 1) rule.nodes(n / 2) = 0.0;
  return rule;
}

QuadratureRule quadrature_from_name(const std::string& name) {
  if (name == "gk15" || name == "GaussKronrod") return gauss_kronrod(15);
  if (name == "gk7") return gauss_kronrod(7);
  if (name.size() > 2 && name.rfind("gl", 0) == 0) {
    try {
      return gauss_legendre(std::stoi(name.substr(2)));
    } catch (const std::invalid_argument&) {
    }
  }
  throw Error(ErrorCode::InvalidSpec, "unknown quadrature rule '" + name + "'");
}

std::string quadrature_name(const QuadratureRule& rule) {
  return (rule.kind == QuadratureKind::GaussKronrod ? "gk" : "gl") + std::to_string(rule.points);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> rescaled_rule(const QuadratureRule& rule, double a,
                                                          double b, int panels) {
  if (!(a <= b)) throw Error(ErrorCode::InvalidInterval, "rescaled_rule: a > b");
  const Eigen::Index m = rule.nodes.size();
  Eigen::VectorXd x(m * panels), w(m * panels);
  const double width = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double half = 0.5 * width;
    const double mid = a + p * width + half;
    x.segment(p * m, m) = (mid + half * rule.nodes.array()).matrix();
    w.segment(p * m, m) = half * rule.weights;
  }
  return {x, w};
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptyTable, "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

KnotVector percentile_knots(std::span<const double> times, int n_basis, int degree,
                            double upper) {
  std::vector<double> v(times.begin(), times.end());
  std::sort(v.begin(), v.end());
  if (v.size() < 2 || v.front() == v.back())
    throw Error(ErrorCode::DuplicateKnots, "percentile_knots needs >= 2 distinct times");
  const int n_interior = n_basis - degree - 1;
  if (n_interior < 0)
    throw Error(ErrorCode::InvalidSpec, "n_basis must be at least degree + 1");

  KnotVector kv;
  kv.degree = degree;
  kv.low = std::min(0.0, v.front());
  kv.high = std::max(v.back() * (1.0 + 1e-8), upper);
  for (int k = 1; k <= n_interior; ++k) {
    const double q = quantile(v, static_cast<double>(k) / (n_interior + 1));
    if (!kv.interior.empty() && !(q > kv.interior.back()))
      throw Error(ErrorCode::DuplicateKnots, "tied percentiles produce duplicate knots");
    kv.interior.push_back(q);
  }
  if (!kv.interior.empty() && !(kv.interior.front() > kv.low))
    throw Error(ErrorCode::DuplicateKnots, "first interior knot coincides with the boundary");
  kv.validate();
  return kv;
}

}  // namespace jmx
