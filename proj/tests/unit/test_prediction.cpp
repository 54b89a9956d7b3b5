#include <cmath>
#include <numbers>

#include "doctest.h"
#include "jmx/prediction.hpp"
#include "jmx/survival.hpp"
#include "support.hpp"

using namespace jmx;
using jmx::testing::raw_subject;
using jmx::testing::structure_of;

namespace {

Draws repeat_draw(const Params& th, Eigen::Index K) {
  Draws d;
  d.beta = th.beta.transpose().replicate(K, 1);
  d.sigma2 = Eigen::VectorXd::Constant(K, th.sigma2);
  d.D = Eigen::Map<const Eigen::RowVectorXd>(th.D.data(), th.D.size()).replicate(K, 1);
  d.gamma = th.gamma.transpose().replicate(K, 1);
  d.alpha = th.alpha.transpose().replicate(K, 1);
  d.gammas_h0 = th.gammas_h0.transpose().replicate(K, 1);
  d.tau_h = Eigen::VectorXd::Constant(K, th.tau_h);
  return d;
}

// Gaussian model, random intercept, alpha = 0, constant hazard 0.1.
struct Fixture {
  ModelStructure s;
  Params th;
  Fixture() {
    s = structure_of(jmx::testing::conjugate_text(10, 10, 10));
    th.beta = Eigen::Vector2d(1.0, -0.3);
    th.sigma2 = 0.25;
    th.D = Eigen::MatrixXd::Constant(1, 1, 0.5);
    th.gamma = Eigen::VectorXd(0);
    th.alpha = Eigen::VectorXd::Zero(1);
    th.gammas_h0 = Eigen::VectorXd::Constant(s.n_h0(), std::log(0.1));
  }
  RawSubject subject(int m = 4, double wiggle = 0.1) const {
    std::vector<double> t, y;
    for (int k = 0; k < m; ++k) {
      t.push_back(k);
      y.push_back(1.0 - 0.3 * k + 0.6 + wiggle * std::sin(k));
    }
    return raw_subject("s1", t, y, 0.0, 0, {});
  }
};

}  // namespace

TEST_SUITE("prediction") {
  TEST_CASE("random-effects mode") {
    Fixture f;
    SUBCASE("no measurements gives the prior mode") {
      const auto cond = conditioning_data(f.s, raw_subject("s0", {}, {}, 0, 0), 2.0);
      CHECK(random_effects_mode(f.s, cond, f.th).b.cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("Gaussian mode is the ridge estimate") {
      const auto raw = f.subject();
      const auto cond = conditioning_data(f.s, raw, 3.0);
      const auto& blk = cond.longit;
      const Eigen::MatrixXd A = blk.Z.transpose() * blk.Z / f.th.sigma2 + f.th.D.inverse();
      const Eigen::VectorXd ridge = A.ldlt().solve(blk.Z.transpose() * (blk.y - blk.X * f.th.beta) / f.th.sigma2);
      CHECK((random_effects_mode(f.s, cond, f.th).b - ridge).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  TEST_CASE("dynamic survival") {
    Fixture f;
    const Draws d = repeat_draw(f.th, 50);
    const auto raw = f.subject();
    SurvfitOptions opt;
    opt.times = {3.0, 4.0, 6.0, 9.0};
    opt.M = 300;
    const auto r = survfit_dynamic(f.s, d, raw, opt);
    REQUIRE(r.rows.size() == 4);   // u = t is folded into the first row
    CHECK(r.last_time == 3.0);
    CHECK(r.rows[0].time == 3.0);
    CHECK(r.rows[0].mean == 1.0);
    CHECK(r.rows[0].lower == 1.0);
    CHECK(r.rows[0].upper == 1.0);
    for (std::size_t k = 1; k < r.rows.size(); ++k) {
      const double exact = std::exp(-0.1 * (r.rows[k].time - 3.0));
      CHECK(r.rows[k].mean == doctest::Approx(exact).epsilon(1e-8));
      CHECK(r.rows[k].first_order == doctest::Approx(exact).epsilon(1e-8));
      CHECK(r.rows[k].first_order <= r.rows[k - 1].first_order);
    }
    opt.times = {2.0};
    CHECK_THROWS_AS(survfit_dynamic(f.s, d, raw, opt), Error);
  }

  TEST_CASE("longitudinal prediction") {
    Fixture f;
    const Draws d = repeat_draw(f.th, 40);
    const auto raw = f.subject();
    PredictOptions opt;
    opt.type = PredictOptions::Type::Marginal;
    opt.times = {0.0, 2.5, 7.0};
    const auto rows = predict_longitudinal(f.s, d, raw, opt);
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
      CHECK(r.pred == doctest::Approx(1.0 - 0.3 * r.time).epsilon(1e-12));
      CHECK(r.upper - r.lower == doctest::Approx(0.0));
    }
  }

  TEST_CASE("subject predictions track precise data") {
    Fixture f;
    f.th.sigma2 = 1e-4;
    const Draws d = repeat_draw(f.th, 40);
    const auto raw = f.subject(8, 0.005);
    PredictOptions opt;
    opt.times = raw.times;
    const auto rows = predict_longitudinal(f.s, d, raw, opt);
    int close = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) close += std::abs(rows[k].pred - raw.y_raw[k]) < 2 * std::sqrt(f.th.sigma2) ? 1 : 0;
    CHECK(close >= static_cast<int>(0.95 * rows.size()));
  }

  TEST_CASE("subject evidence") {
    Fixture f;
    const Draws d = repeat_draw(f.th, 20);
    const auto raw = f.subject();
    const auto cond = conditioning_data(f.s, raw, 3.0);
    const auto& blk = cond.longit;
    const Eigen::Index m = blk.y.size();
    const Eigen::MatrixXd V = f.th.sigma2 * Eigen::MatrixXd::Identity(m, m) + blk.Z * f.th.D * blk.Z.transpose();
    const Eigen::VectorXd r = blk.y - blk.X * f.th.beta;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
    const double log_normal = -0.5 * (m * std::log(2 * std::numbers::pi) + std::log(V.determinant()) + r.dot(ldlt.solve(r)));
    const double exact = log_normal - 0.1 * 3.0;
    const double approx = subject_marginal_loglik(f.s, d, raw, 3.0);
    CHECK(std::abs(approx - exact) < 0.05 * std::abs(exact));

    const double empty = subject_marginal_loglik(f.s, d, raw_subject("e", {}, {}, 0, 0), 2.0);
    CHECK(empty == doctest::Approx(-0.2).epsilon(1e-8));
  }

  TEST_CASE("model averaging") {
    CHECK(bma_weights({-3.0}) == std::vector<double>{1.0});
    for (double w : bma_weights({-7, -7, -7, -7, -7})) CHECK(w == doctest::Approx(0.2));
    const auto a = bma_weights({-1.0, -2.5, -0.2});
    const auto b = bma_weights({-1001.0, -1002.5, -1000.2});
    double sum = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
      sum += a[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    const auto prior = bma_weights({0.0, 0.0}, {0.25, 0.75});
    CHECK(prior[1] == doctest::Approx(0.75));

    auto curve = [](double rate) {
      SurvfitResult r;
      r.last_time = 1.0;
      for (double u : {1.0, 2.0, 3.0}) {
        const double s = std::exp(-rate * (u - 1.0));
        r.rows.push_back(SurvfitRow{u, s, s, s, s, s});
      }
      return r;
    };
    const auto one = curve(0.1), two = curve(0.4);
    const auto first = bma_combine({one, two}, {1.0, 0.0});
    for (std::size_t k = 0; k < 3; ++k) CHECK(first.rows[k].mean == one.rows[k].mean);
    const auto same = bma_combine({one, one}, {0.3, 0.7});
    for (std::size_t k = 0; k < 3; ++k) CHECK(same.rows[k].mean == doctest::Approx(one.rows[k].mean).epsilon(1e-15));
    const auto mix = bma_combine({one, two}, {0.3, 0.7});
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(std::abs(mix.rows[k].mean - (0.3 * one.rows[k].mean + 0.7 * two.rows[k].mean)) < 1e-12);
  }

  TEST_CASE("fitted model predictions start at one") {
    const auto& f = jmx::testing::toy_fit();
    const auto& m = f.artifact.model;
    const auto subjects = subjects_for(m.structure, f.data.long_table, nullptr, false);
    for (bool mc : {true, false}) {
      SurvfitOptions opt;
      opt.simulate = mc;
      opt.M = 50;
      const auto r = survfit_dynamic(m.structure, m.draws, subjects[3], opt);
      CHECK(r.rows.front().mean == 1.0);
      CHECK(r.rows.front().first_order == 1.0);
      for (std::size_t k = 1; k < r.rows.size(); ++k) CHECK(r.rows[k].first_order <= r.rows[k - 1].first_order);
    }
  }
}
