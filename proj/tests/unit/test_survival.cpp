#include <cmath>

#include "doctest.h"
#include "jmx/mcmc.hpp"
#include "jmx/survival.hpp"
#include "support.hpp"

using namespace jmx;
using jmx::testing::constant_hazard_text;
using jmx::testing::raw_subject;
using jmx::testing::structure_of;

namespace {

Params zero_params(const ModelStructure& s) {
  Params p;
  p.beta = Eigen::VectorXd::Zero(s.p());
  p.D = Eigen::MatrixXd::Identity(s.q(), s.q());
  p.gamma = Eigen::VectorXd::Zero(s.n_gamma());
  p.alpha = Eigen::VectorXd::Zero(s.n_alpha());
  p.gammas_h0 = Eigen::VectorXd::Zero(s.n_h0());
  return p;
}

SubjectData one_subject(const ModelStructure& s, double T, int delta) {
  const auto raw = raw_subject("1", {0.0}, {0.0}, T, delta, {{"x", "0"}});
  return prepare_data(s, {raw}, DataFingerprint{}).subjects.front();
}

}  // namespace

TEST_SUITE("survival") {
  TEST_CASE("baseline hazard") {
    BaselineHazard bh;
    bh.knots = KnotVector{{2.0, 4.0, 6.0}, 0.0, 10.0, 3};
    bh.gammas_h0 = Eigen::VectorXd::Constant(7, -1.7);
    for (double t : {0.0, 1.3, 5.5, 9.99}) CHECK(log_baseline_hazard(t, bh) == doctest::Approx(-1.7).epsilon(1e-12));
    bh.gammas_h0.setZero();
    CHECK(std::exp(log_baseline_hazard(3.3, bh)) == 1.0);
    bh.gammas_h0 = Eigen::VectorXd::LinSpaced(7, -2.0, 1.0);
    for (int k = 0; k < 100; ++k) {
      const double t = 0.1 * k;
      CHECK(log_baseline_hazard(t, bh) == doctest::Approx(bspline_basis(t, bh.knots).dot(bh.gammas_h0)).epsilon(1e-12));
    }
  }

  TEST_CASE("difference penalty rank") {
    const auto K = difference_penalty(17, 2);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    lu.setThreshold(1e-10);
    CHECK(lu.rank() == 15);
    CHECK(penalty_rank(17, 2) == 15);
    // constant and linear coefficient vectors are unpenalized
    const Eigen::VectorXd lin = Eigen::VectorXd::LinSpaced(17, 0.0, 1.0);
    CHECK((K * lin).norm() < 1e-12);
  }

  TEST_CASE("constant hazard survival and event density") {
    const auto s = structure_of(constant_hazard_text(std::log(0.2)));
    auto theta = zero_params(s);
    theta.gammas_h0.setConstant(std::log(0.2));
    const Eigen::VectorXd b = Eigen::VectorXd::Zero(1);
    const Covariates cov{{"x", "0.7"}};
    CHECK(survival_function(s, cov, theta, b, 0.0) == 1.0);
    CHECK(std::abs(survival_function(s, cov, theta, b, 5.0) - std::exp(-1.0)) < 1e-8);

    CHECK(log_density_event(s, one_subject(s, 5.0, 1), theta, b) == doctest::Approx(std::log(0.2) - 1.0).epsilon(1e-10));
    const auto cens = one_subject(s, 5.0, 0);
    CHECK(log_density_event(s, cens, theta, b) == doctest::Approx(std::log(survival_function(s, cens.covariates, theta, b, 5.0))).epsilon(1e-12));
  }

  TEST_CASE("hazard with zero coefficients is the baseline") {
    const auto s = structure_of(constant_hazard_text(-1.0, 0.8, 0.4));
    auto theta = zero_params(s);
    theta.gammas_h0.setConstant(-1.1);
    const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 2.0);
    const Covariates cov{{"x", "1.5"}};
    Eigen::VectorXd t(3), w(3);
    t << 0.1, 0.5, 0.9;
    w.setOnes();
    const auto d = make_hazard_design(s, cov, t, w);
    const auto h = make_subject_hazard(s, cov);
    CHECK((log_hazard(s, d, h, theta, b).array() + 1.1).abs().maxCoeff() < 1e-12);
    theta.gamma << 0.4;
    theta.alpha << 0.8;
    CHECK((log_hazard(s, d, h, theta, b).array() - (-1.1 + 0.4 * 1.5 + 0.8 * 2.0)).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("overflowing hazard is reported") {
    const auto s = structure_of(constant_hazard_text(0.0, 1.0));
    auto theta = zero_params(s);
    theta.alpha << 1.0;
    const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 800.0);
    CHECK_THROWS_AS(survival_function(s, {{"x", "0"}}, theta, b, 1.0), Error);
    try {
      survival_function(s, {{"x", "0"}}, theta, b, 1.0);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonfiniteHazard);
      CHECK(e.exit_code() == 4);
    }
    CHECK(std::isinf(log_density_event(s, one_subject(s, 1.0, 1), theta, b)));
  }

  TEST_CASE("transformation features") {
    const std::string text =
        "id: id\ntime: time\nresponse: y\nevent_time: Time\nevent: event\n"
        "fixed: time\nrandom: 1\nsurvival: drug\nfamily: gaussian\nassociation: td-both\n"
        "transform_value: identity, pow2\n"
        "extra_fixed: 1\nextra_ind_fixed: 2\n"
        "transform_extra: identity, interact(drug, D-penicil)\n"
        "levels.drug: placebo, D-penicil\n"
        "sim.visits: 0, 1\nsim.covariate.drug: binary(0.5, placebo, D-penicil)\n"
        "truth.beta: 1.2, 0.3\ntruth.sigma2: 1\ntruth.D: 1\ntruth.gamma: 0\n"
        "truth.alpha: 0, 0, 0, 0\ntruth.gammas_h0: 0\n";
    const auto s = structure_of(text);
    REQUIRE(s.n_alpha() == 4);
    Eigen::VectorXd beta(2);
    beta << 1.2, 0.3;
    const Eigen::VectorXd b = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd t = Eigen::VectorXd::Zero(1), w = Eigen::VectorXd::Ones(1);
    for (const std::string drug : {"placebo", "D-penicil"}) {
      const Covariates cov{{"drug", drug}};
      const auto f = association_features(s, make_hazard_design(s, cov, t, w), make_subject_hazard(s, cov), beta, b);
      CHECK(f(0, 0) == doctest::Approx(1.2));
      CHECK(f(0, 1) == doctest::Approx(1.44));
      CHECK(f(0, 2) == doctest::Approx(0.3));
      CHECK(f(0, 3) == doctest::Approx(drug == "placebo" ? 0.0 : 0.3));
    }
  }

  TEST_CASE("hazard-ratio contrasts") {
    CHECK(std::exp(1.4132 * std::log(2.0)) == doctest::Approx(2.66).epsilon(0.005));
    CHECK(std::exp(2.6043 * std::log(1.5)) == doctest::Approx(2.87).epsilon(0.005));
  }

  TEST_CASE("Cox fit recovers a hazard ratio of two") {
    std::mt19937_64 rng(17);
    std::exponential_distribution<double> e(1.0);
    std::vector<CoxRow> rows;
    for (int i = 0; i < 2000; ++i) {
      const double g = i % 2;
      const double T = e(rng) / (0.1 * std::exp(std::log(2.0) * g));
      const double C = e(rng) / 0.05;
      CoxRow r;
      r.stop = std::min(T, C);
      r.event = T <= C;
      r.x = Eigen::RowVectorXd::Constant(1, g);
      rows.push_back(r);
    }
    const auto fit = fit_cox(rows);
    CHECK(fit.converged);
    CHECK(std::abs(fit.coef(0) - std::log(2.0)) < 3 * std::sqrt(fit.cov(0, 0)));
  }

  TEST_CASE("Cox degenerate inputs") {
    std::vector<CoxRow> rows;
    for (int i = 0; i < 40; ++i) {
      CoxRow r;
      r.stop = 1.0 + i;
      r.event = i % 2 == 0 ? 1 : 0;   // group 1 never has an event
      r.x = Eigen::RowVectorXd(2);
      r.x << (i % 2), 0.0;
      rows.push_back(r);
    }
    const auto fit = fit_cox(rows);
    CHECK(fit.monotone);
    CHECK(fit.dropped == std::vector<int>{1});
    CHECK(fit.coef(1) == 0.0);
  }
}
