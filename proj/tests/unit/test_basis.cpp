#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "jmx/basis.hpp"
#include "jmx/terms.hpp"

using namespace jmx;

namespace {
const std::vector<double> kInterior{2.5, 5.0};
const std::pair<double, double> kBoundary{0.0, 10.0};

VectorX<double> ns(double t, int df = 3) {
  return natural_cubic_basis<double>(t, df, kBoundary, kInterior);
}
}  // namespace

TEST_SUITE("basis") {
  TEST_CASE("degree-0 B-spline is an indicator") {
    const KnotVector kv{{}, 0.0, 1.0, 0};
    const auto b = bspline_basis(0.5, kv);
    REQUIRE(b.size() == 1);
    CHECK(b(0) == 1.0);
  }

  TEST_CASE("cubic B-splines sum to one") {
    const KnotVector kv{{1.0, 2.0, 4.5, 7.0}, 0.0, 10.0, 3};
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int k = 0; k < 1000; ++k) CHECK(std::abs(bspline_basis(u(rng), kv).sum() - 1.0) < 1e-12);
    CHECK(std::abs(bspline_basis(10.0, kv).sum() - 1.0) < 1e-12);
  }

  TEST_CASE("B-spline agrees with Cox-de Boor recursion") {
    const KnotVector kv{{1.0, 3.0}, 0.0, 5.0, 2};
    const auto aug = kv.augmented();
    // independent recursive definition on the augmented knots
    std::function<double(int, int, double)> N = [&](int i, int p, double x) -> double {
      if (p == 0) return (aug[i] <= x && x < aug[i + 1]) ? 1.0 : 0.0;
      double v = 0.0;
      if (aug[i + p] > aug[i]) v += (x - aug[i]) / (aug[i + p] - aug[i]) * N(i, p - 1, x);
      if (aug[i + p + 1] > aug[i + 1])
        v += (aug[i + p + 1] - x) / (aug[i + p + 1] - aug[i + 1]) * N(i + 1, p - 1, x);
      return v;
    };
    for (double x : {0.1, 0.9, 1.5, 2.2, 3.7, 4.99}) {
      const auto b = bspline_basis(x, kv);
      for (int i = 0; i < b.size(); ++i) CHECK(b(i) == doctest::Approx(N(i, 2, x)).epsilon(1e-12));
    }
  }

  TEST_CASE("invalid knots are rejected") {
    CHECK_THROWS_AS(bspline_basis(0.5, KnotVector{{}, 1.0, 1.0, 3}), Error);
    CHECK_THROWS_AS(bspline_basis(0.5, KnotVector{{0.6, 0.4}, 0.0, 1.0, 3}), Error);
    CHECK_THROWS_AS(natural_cubic_basis<double>(1.0, 0, kBoundary, std::span<const double>{}), Error);
  }

  TEST_CASE("natural basis is linear beyond the boundary") {
    const double h = 1e-3;
    for (double t : {10.0 + 1e-6, 12.0, 20.0}) {
      const auto d2 = (ns(t + h) - 2.0 * ns(t) + ns(t - h)) / (h * h);
      CHECK(d2.cwiseAbs().maxCoeff() < 1e-6);
    }
    const auto d1 = natural_cubic_deriv<double>(11.0, 3, kBoundary, kInterior);
    const auto d2 = natural_cubic_deriv<double>(15.0, 3, kBoundary, kInterior);
    CHECK((d1 - d2).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("df=1 column is monotone") {
    double prev = -1;
    for (int k = 0; k <= 100; ++k) {
      const double v = natural_cubic_basis<double>(0.1 * k, 1, kBoundary, std::span<const double>{})(0);
      CHECK(v > prev);
      prev = v;
    }
  }

  TEST_CASE("derivative integrates back to the basis") {
    const auto rule = gauss_kronrod(15);
    for (int j = 0; j < 3; ++j) {
      const double integral = integrate(
          [&](double t) { return natural_cubic_deriv<double>(t, 3, kBoundary, kInterior)(j); }, 1.0, 8.0,
          rule, 8);
      CHECK(std::abs(integral - (ns(8.0)(j) - ns(1.0)(j))) < 1e-5);
    }
  }

  TEST_CASE("integral of the basis") {
    CHECK(natural_cubic_integral<double>(0.0, 3, kBoundary, kInterior).cwiseAbs().maxCoeff() == 0.0);
    // derivative of the integral recovers the basis
    const double t = 6.3, h = 1e-4;
    const VectorX<double> d = (natural_cubic_integral<double>(t + h, 3, kBoundary, kInterior) -
                    natural_cubic_integral<double>(t - h, 3, kBoundary, kInterior)) /
                   (2 * h);
    CHECK((d - ns(t)).cwiseAbs().maxCoeff() < 1e-6);
    // first column is (t - low) / L, so its integral is t^2 / (2 L)
    CHECK(natural_cubic_integral<double>(4.0, 3, kBoundary, kInterior)(0) == doctest::Approx(0.8).epsilon(1e-12));
  }

  TEST_CASE("quadrature oracles") {
    const auto gk = gauss_kronrod(15);
    const auto gl = gauss_legendre(15);
    CHECK(std::abs(integrate([](double x) { return x * x; }, 0, 1, gk) - 1.0 / 3.0) < 1e-14);
    CHECK(std::abs(integrate([](double x) { return std::exp(x); }, 0, 1, gk) - (std::exp(1.0) - 1.0)) < 1e-10);
    CHECK(std::abs(integrate([](double x) { return std::sin(x); }, 0, std::numbers::pi, gk) - 2.0) < 1e-10);
    CHECK(std::abs(integrate([](double x) { return std::sin(x); }, 0, std::numbers::pi, gl) - 2.0) < 1e-10);
    CHECK_THROWS_AS(integrate([](double x) { return x; }, 1, 0, gk), Error);
    CHECK(quadrature_name(quadrature_from_name("gl7")) == "gl7");
    CHECK_THROWS_AS(quadrature_from_name("simpson"), Error);
  }

  TEST_CASE("percentile knots") {
    std::vector<double> grid;
    for (int k = 0; k <= 100; ++k) grid.push_back(k);
    const auto kv = percentile_knots(grid, 17, 3);
    REQUIRE(kv.interior.size() == 13);
    for (int k = 1; k <= 13; ++k) CHECK(kv.interior[k - 1] == doctest::Approx(100.0 * k / 14).epsilon(1e-12));
    CHECK(kv.size() == 17);
    CHECK(percentile_knots(grid, 4, 3).interior.empty());
    const std::vector<double> same(10, 2.0);
    CHECK_THROWS_AS(percentile_knots(same, 17, 3), Error);
  }

  TEST_CASE("design rows") {
    DesignContext ctx;
    ctx.time_var = "year";
    ctx.splines[2] = SplineKnots{0.0, 10.0, {4.0}};
    ctx.factors["drug"] = {"placebo", "D-penicil"};
    const auto intercept = TermList::parse("1", "year");
    CHECK(design_row(intercept, ctx, 3.0, {}) == Eigen::RowVectorXd::Ones(1));

    const auto spline = TermList::parse("ns(year, 2)", "year");
    const auto row = design_row(spline, ctx, 0.0, {});
    const std::vector<double> inner{4.0};
    const auto expect = natural_cubic_basis<double>(0.0, 2, {0.0, 10.0}, inner);
    REQUIRE(row.size() == 3);
    CHECK(row(0) == 1.0);
    CHECK(row(1) == expect(0));
    CHECK(row(2) == expect(1));

    const auto inter = TermList::parse("0 + drug:age", "year");
    CHECK(design_row(inter, ctx, 0.0, {{"drug", "D-penicil"}, {"age", "50"}})(0) == 50.0);
    CHECK(design_row(inter, ctx, 0.0, {{"drug", "placebo"}, {"age", "50"}})(0) == 0.0);
    const auto star = TermList::parse("drug * age", "year", false);
    CHECK(column_names(star, ctx) == std::vector<std::string>{"drugD-penicil", "age", "drugD-penicil:age"});
  }
}
