#include <cmath>
#include <random>

#include "doctest.h"
#include "jmx/mcmc.hpp"
#include "jmx/posterior.hpp"
#include "support.hpp"

using namespace jmx;

namespace {

PreparedData toy_prepared(int n, int n_iter, int n_keep) {
  auto sim = parse_simulation(jmx::testing::small_simulation_text(n), "<toy>");
  const auto data = simulate_joint(sim, 5);
  Config c = parse_config(jmx::testing::small_simulation_text(n), "<toy>");
  c.spec.control.n_adapt = 100;
  c.spec.control.n_burnin = 100;
  c.spec.control.n_iter = n_iter;
  c.spec.control.n_keep = n_keep;
  return prepare(c.spec, data.long_table, &data.surv_table);
}

}  // namespace

TEST_SUITE("mcmc") {
  TEST_CASE("random-walk Metropolis") {
    const Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(1, 1);
    SUBCASE("flat target always accepts") {
      Rng rng(1);
      Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
      int acc = 0;
      for (int k = 0; k < 1000; ++k) {
        auto st = rw_metropolis_block(x, 0.0, [](const Eigen::VectorXd&) { return 0.0; }, chol, 1.0, rng);
        acc += st.accepted;
        x = st.value;
      }
      CHECK(acc == 1000);
    }
    SUBCASE("standard normal with scale 2.4") {
      Rng rng(2);
      auto lt = [](const Eigen::VectorXd& v) { return -0.5 * v.squaredNorm(); };
      Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
      double cur = lt(x);
      int acc = 0;
      for (int k = 0; k < 10000; ++k) {
        auto st = rw_metropolis_block(x, cur, lt, chol, 2.4, rng);
        acc += st.accepted;
        x = st.value;
        cur = st.log_target;
      }
      CHECK(acc / 10000.0 >= 0.2);
      CHECK(acc / 10000.0 <= 0.5);
    }
    SUBCASE("same seed, same chain") {
      auto chain = [&](std::uint64_t seed) {
        Rng rng(seed);
        auto lt = [](const Eigen::VectorXd& v) { return -0.5 * v.squaredNorm(); };
        Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
        std::vector<double> out;
        double cur = lt(x);
        for (int k = 0; k < 200; ++k) {
          auto st = rw_metropolis_block(x, cur, lt, chol, 1.0, rng);
          x = st.value;
          cur = st.log_target;
          out.push_back(x(0));
        }
        return out;
      };
      CHECK(chain(9) == chain(9));
    }
  }

  TEST_CASE("slice update matches the inverse-gamma conditional") {
    const int n = 50;
    const double rss = 20.0, a0 = 0.01, b0 = 0.01;
    auto loglik = [&](double s2) { return -0.5 * n * std::log(s2) - 0.5 * rss / s2; };
    Rng rng(4);
    double s2 = 1.0, sum = 0.0;
    const int draws = 20000;
    for (int k = 0; k < draws; ++k) {
      s2 = slice_update_precision(s2, loglik, a0, b0, rng);
      sum += s2;
    }
    const double analytic = (b0 + rss / 2) / (a0 + n / 2.0 - 1);
    CHECK(std::abs(sum / draws / analytic - 1.0) < 0.02);

    Rng r1(8), r2(8);
    CHECK(slice_update_precision(0.5, loglik, a0, b0, r1) == slice_update_precision(0.5, loglik, a0, b0, r2));
  }

  TEST_CASE("Wishart Gibbs") {
    Eigen::Matrix2d D;
    D << 1.0, 0.3, 0.3, 0.5;
    const Eigen::Matrix2d L = D.llt().matrixL();
    Rng rng(6);
    std::normal_distribution<double> z;
    Eigen::MatrixXd b(5000, 2);
    for (int i = 0; i < b.rows(); ++i) b.row(i) = (L * Eigen::Vector2d(z(rng), z(rng))).transpose();
    const Eigen::MatrixXd R0 = 100.0 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::Matrix2d avg = Eigen::Matrix2d::Zero();
    for (int k = 0; k < 500; ++k) avg += gibbs_wishart_D(b, 3.0, R0, rng).inverse();
    avg /= 500;
    CHECK((avg - D).norm() / D.norm() < 0.05);

    // with no random effects the draw comes from the prior, mean nu0 * R0
    const Eigen::MatrixXd none(0, 2);
    const Eigen::MatrixXd S = 0.1 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::Matrix2d mean = Eigen::Matrix2d::Zero();
    for (int k = 0; k < 20000; ++k) mean += gibbs_wishart_D(none, 5.0, S, rng);
    mean /= 20000;
    CHECK((mean - 5.0 * S).norm() / (5.0 * S).norm() < 0.03);
  }

  TEST_CASE("smoothing parameter at zero coefficients") {
    const auto K = difference_penalty(17, 2);
    Rng rng(12);
    double sum = 0.0;
    for (int k = 0; k < 20000; ++k) sum += gibbs_tau_h(Eigen::VectorXd::Zero(17), K, 15, 1.0, 0.005, rng);
    CHECK(std::abs(sum / 20000 / ((1.0 + 7.5) / 0.005) - 1.0) < 0.03);
  }

  TEST_CASE("adaptation direction") {
    CHECK(adapt_log_scale(0.0, 0.0, 0.234, 1) < 0.0);
    CHECK(adapt_log_scale(0.0, 1.0, 0.234, 1) > 0.0);
    CHECK(std::abs(adapt_log_scale(0.3, 0.234, 0.234, 5) - 0.3) < 1e-12);
    CHECK(target_acceptance(1) == 0.44);
    CHECK(target_acceptance(5) == 0.234);
  }

  TEST_CASE("single kept draw") {
    const auto prep = toy_prepared(30, 5, 1);
    const auto init = initialize(prep.structure, prep.data);
    MCMCControl ctl = prep.structure.spec.control;
    ctl.n_adapt = 0;
    ctl.n_burnin = 0;
    const auto d = run_mcmc(prep.structure, prep.data, init, ctl);
    REQUIRE(d.size() == 1);
    CHECK(d.beta.allFinite());
    CHECK(d.loglik.allFinite());
    CHECK(std::isfinite(d.sigma2(0)));
  }

  TEST_CASE("determinism") {
    const auto prep = toy_prepared(40, 200, 50);
    const auto init = initialize(prep.structure, prep.data);
    const auto a = run_mcmc(prep.structure, prep.data, init, prep.structure.spec.control);
    const auto b = run_mcmc(prep.structure, prep.data, init, prep.structure.spec.control);
    CHECK(a.beta == b.beta);
    CHECK(a.gammas_h0 == b.gammas_h0);
    CHECK(a.loglik == b.loglik);
    MCMCControl other = prep.structure.spec.control;
    other.seed += 1;
    CHECK(run_mcmc(prep.structure, prep.data, init, other).beta != a.beta);
  }

  TEST_CASE("log posterior at the initial values is finite") {
    const auto prep = toy_prepared(40, 200, 50);
    const auto init = initialize(prep.structure, prep.data);
    CHECK(std::isfinite(log_posterior(prep.structure, init.theta, init.b, prep.data)));
    Params bad = init.theta;
    bad.sigma2 = -1.0;
    CHECK_THROWS_AS(log_posterior(prep.structure, bad, init.b, prep.data), Error);
  }

  TEST_CASE("conjugate beta posterior") {
    const std::string text = jmx::testing::conjugate_text(150, 6000, 2000);
    const auto sim = parse_simulation(text);
    const auto data = simulate_joint(sim, 3);
    const Config c = parse_config(text);
    const auto prep = prepare(c.spec, data.long_table, &data.surv_table);
    const auto fit = fit_prepared(prep, FitOptions{false});
    const auto g = jmx::testing::conjugate_beta_posterior(prep.data, 0.25, Eigen::MatrixXd::Constant(1, 1, 0.5),
                                                          c.spec.prior.v0);
    const auto sum = summarize(prep.structure, fit.draws);
    for (Eigen::Index k = 0; k < 2; ++k) {
      CHECK(std::abs(sum[static_cast<std::size_t>(k)].mean - g.mean(k)) < 3 * sum[static_cast<std::size_t>(k)].std_err);
      CHECK(sum[static_cast<std::size_t>(k)].sd == doctest::Approx(std::sqrt(g.cov(k, k))).epsilon(0.15));
    }
    CHECK(fit.draws.sigma2.cwiseEqual(0.25).all());
  }
}
