#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "jmx/error.hpp"
#include "jmx/longitudinal.hpp"

using namespace jmx;

namespace {

// Random-intercept-and-slope blocks with design [1, t, x] and Z = [1, t].
std::vector<LongitudinalBlock> simulate_blocks(int n, const Eigen::Vector3d& beta, double sd_b0,
                                               double sigma, std::uint64_t seed,
                                               bool binary = false, bool probit = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LongitudinalBlock> out;
  for (int i = 0; i < n; ++i) {
    const int m = 6;
    LongitudinalBlock blk;
    blk.X.resize(m, 3);
    blk.Z.resize(m, 1);
    blk.y.resize(m);
    const double x = z(rng);
    const double b0 = sd_b0 * z(rng);
    for (int j = 0; j < m; ++j) {
      const double t = j;
      blk.X.row(j) << 1.0, t, x;
      blk.Z(j, 0) = 1.0;
      const double eta = blk.X.row(j).dot(beta) + b0;
      if (binary) {
        const double p = probit ? 0.5 * std::erfc(-eta / std::sqrt(2.0)) : 1.0 / (1.0 + std::exp(-eta));
        blk.y(j) = u(rng) < p ? 1.0 : 0.0;
      } else {
        blk.y(j) = eta + sigma * z(rng);
      }
    }
    out.push_back(blk);
  }
  return out;
}

}  // namespace

TEST_SUITE("longitudinal") {
  TEST_CASE("linear predictor") {
    Eigen::RowVectorXd x(2), z(1);
    x << 1, 2;
    z << 1;
    Eigen::VectorXd beta(2), b(1);
    beta << 0.5, 1;
    b << -0.5;
    CHECK(linear_predictor(x, z, beta, b) == 2.0);
    CHECK(linear_predictor(x, z, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1)) == 0.0);
  }

  TEST_CASE("family densities") {
    CHECK(log_density_long(1.3, 1.3, 1.0, Family{}) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-12));
    CHECK(log_density_long(1.0, 0.0, 1.0, Family::parse("binomial-logit")) == doctest::Approx(std::log(0.5)));
    const Family t4 = Family::parse("student-t(4)");
    // t density at its centre: Gamma(5/2) / (Gamma(2) sqrt(4 pi))
    const double direct = std::log(std::tgamma(2.5) / (std::tgamma(2.0) * std::sqrt(4.0 * std::numbers::pi)));
    CHECK(log_density_long(0.7, 0.7, 1.0, t4) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(log_density_long(0.0, 0.0, 1.0, Family::parse("binomial-probit")) == doctest::Approx(std::log(0.5)));
    // left-censored observation contributes log Phi((y - eta) / sigma)
    const Family cg = Family::parse("censored-gaussian(cens)");
    CHECK(log_density_long(0.0, 0.0, 2.0, cg, 1) == doctest::Approx(std::log(0.5)));
    CHECK(Family::parse(cg.name()).censor_column == "cens");
    CHECK_THROWS_AS(Family::parse("poisson"), Error);
  }

  TEST_CASE("no random-effect variance gives OLS") {
    const Eigen::Vector3d beta(1.0, -0.2, 0.5);
    const auto blocks = simulate_blocks(200, beta, 0.0, 1.0, 5);
    const auto fit = fit_lmm_init(blocks);
    Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(3, 3);
    Eigen::VectorXd Xty = Eigen::VectorXd::Zero(3);
    int n = 0;
    for (const auto& b : blocks) {
      XtX += b.X.transpose() * b.X;
      Xty += b.X.transpose() * b.y;
      n += static_cast<int>(b.y.size());
    }
    const Eigen::VectorXd ols = XtX.ldlt().solve(Xty);
    const Eigen::VectorXd se = XtX.inverse().diagonal().cwiseSqrt();
    for (int k = 0; k < 3; ++k) CHECK(std::abs(fit.beta(k) - ols(k)) < 3 * se(k));
  }

  TEST_CASE("perfect fit") {
    const Eigen::Vector3d beta(1.0, -0.2, 0.5);
    auto blocks = simulate_blocks(30, beta, 0.0, 0.0, 2);
    const auto fit = fit_lmm_init(blocks);
    CHECK((fit.beta - beta).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.sigma2 < 1e-6);
  }

  TEST_CASE("random-intercept shrinkage") {
    const auto blocks = simulate_blocks(150, Eigen::Vector3d(2.0, 0.1, 0.3), 1.0, 0.7, 9);
    const auto fit = fit_lmm_init(blocks);
    CHECK(fit.converged);
    // empirical-Bayes mean of subject 0: n/(n + sigma2/D) times its mean residual
    const auto& b = blocks[0];
    const double m = static_cast<double>(b.y.size());
    const double resid = (b.y - b.X * fit.beta).mean();
    const double factor = m / (m + fit.sigma2 / fit.D(0, 0));
    CHECK(fit.b(0, 0) == doctest::Approx(factor * resid).epsilon(1e-6));
    CHECK(std::abs(fit.b(0, 0)) <= std::abs(resid));
    // EM log-likelihood never decreases
    for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
      CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1] - 1e-8 * std::abs(fit.loglik_trace[k - 1]));
  }

  TEST_CASE("binary fits") {
    SUBCASE("all zeros fall back to the penalty") {
      auto blocks = simulate_blocks(40, Eigen::Vector3d::Zero(), 0.5, 0.0, 4, true);
      for (auto& b : blocks) {
        b.y.setZero();
        b.X = b.X.leftCols(1).eval();
      }
      const auto fit = fit_glmm_init(blocks, Family::parse("binomial-logit"));
      CHECK(fit.separation);
      CHECK(fit.beta(0) <= -3.0);
    }
    SUBCASE("null covariate and link scaling") {
      const auto blocks = simulate_blocks(400, Eigen::Vector3d(0.2, 0.0, 0.0), 0.3, 0.0, 21, true);
      const auto logit = fit_glmm_init(blocks, Family::parse("binomial-logit"));
      const double se = std::sqrt(logit.beta_cov(2, 2));
      CHECK(std::abs(logit.beta(2)) < 3 * se);

      const auto strong = simulate_blocks(600, Eigen::Vector3d(0.3, 0.0, 1.2), 0.3, 0.0, 22, true);
      const auto l = fit_glmm_init(strong, Family::parse("binomial-logit"));
      const auto p = fit_glmm_init(strong, Family::parse("binomial-probit"));
      const double ratio = l.beta(2) / p.beta(2);
      CHECK(ratio >= 1.6);
      CHECK(ratio <= 1.8);
    }
  }
}
