#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "jmx/accuracy.hpp"
#include "support.hpp"

using namespace jmx;
using jmx::testing::toy_fit;

namespace {

// Fresh subjects from the toy generator without random censoring.
std::vector<RawSubject> fresh_subjects(int n, std::uint64_t seed) {
  const auto& f = toy_fit();
  SimulationSpec sim = f.sim;
  sim.n = static_cast<std::size_t>(n);
  sim.censor_rate = 0.0;
  const auto data = simulate_joint(sim, seed);
  return subjects_for(f.artifact.model.structure, data.long_table, &data.surv_table, true);
}

}  // namespace

TEST_SUITE("accuracy") {
  TEST_CASE("Kaplan-Meier product limits") {
    const auto a = kaplan_meier({1, 2, 3, 4}, {1, 1, 1, 1});
    CHECK(a.surv == std::vector<double>{0.75, 0.5, 0.25, 0.0});
    CHECK(a.at(0.5) == 1.0);
    CHECK(a.at(2.5) == 0.5);
    const auto c = kaplan_meier({1, 2, 3}, {0, 0, 0});
    CHECK(c.at(10.0) == 1.0);
    const auto b = kaplan_meier({1, 2, 3}, {1, 0, 1});
    CHECK(b.at(1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(b.at(2.5) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(b.at(3.0) == 0.0);
  }

  TEST_CASE("pair counting") {
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> e(0.2);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<AucInput> in;
    for (int i = 0; i < 50; ++i) {
      AucInput a;
      a.T = e(rng);
      a.delta = 1;
      a.pi = std::exp(-0.2 * a.T) + 0.2 * u(rng);   // noisy but informative
      in.push_back(a);
    }
    const double t = 1.0, dt = 4.0;
    double conc = 0, pairs = 0;
    for (std::size_t i = 0; i < in.size(); ++i)
      for (std::size_t j = 0; j < in.size(); ++j) {
        if (!(in[i].T > t && in[i].T <= t + dt && in[j].T > t + dt)) continue;
        pairs += 1;
        conc += in[i].pi < in[j].pi;
      }
    const auto parts = auc_pairs(in, t, dt);
    CHECK(parts.pairs1 == pairs);
    CHECK(parts.value() == conc / pairs);

    // predictions ordered like the event times: every pair is concordant
    for (auto& a : in) a.pi = a.T;
    CHECK(auc_pairs(in, t, dt).value() == 1.0);

    // predictions independent of outcome
    std::vector<AucInput> noise;
    for (int i = 0; i < 3000; ++i) noise.push_back(AucInput{e(rng), 1, u(rng), 0.0});
    CHECK(std::abs(auc_pairs(noise, t, dt).value() - 0.5) < 0.05);
  }

  TEST_CASE("prediction error arithmetic") {
    std::vector<PeInput> perfect, half;
    for (int i = 0; i < 20; ++i) {
      const double T = 1.0 + i;
      const bool survives = T >= 10.0;
      perfect.push_back(PeInput{T, 1, survives ? 1.0 : 0.0, 0.0});
      half.push_back(PeInput{T, 1, 0.5, 0.0});
    }
    const auto sq = loss_by_name("square");
    CHECK(pe_from_predictions(perfect, 0.0, 10.0, sq) == 0.0);
    CHECK(pe_from_predictions(half, 0.0, 10.0, sq) == 0.25);
    CHECK(pe_from_predictions(half, 0.0, 10.0, loss_by_name("absolute")) == 0.5);
    CHECK_THROWS_AS(pe_from_predictions(half, 100.0, 110.0, sq), Error);
    CHECK_THROWS_AS(loss_by_name("huber"), Error);
  }

  TEST_CASE("dynamic concordance combination") {
    const std::vector<double> w{0.1, 0.3, 0.2, 0.4}, pr{0.5, 0.2, 0.7, 0.1};
    CHECK(dyn_c_combine(w, {0.77, 0.77, 0.77, 0.77}, pr) == doctest::Approx(0.77).epsilon(1e-12));
    CHECK(std::abs(dyn_c_combine(w, {0.77, 0.77, 0.77, 0.77}, pr) - 0.77) < 1e-12);
    // zero-weight nodes contribute nothing
    CHECK(dyn_c_combine({0.5, 0.5, 0.0}, {0.6, 0.8, 0.1}, {1, 1, 1}) == doctest::Approx(0.7).epsilon(1e-12));
  }

  TEST_CASE("splits") {
    const auto loo = cv_splits(10, 10, 1);
    std::set<std::size_t> seen;
    for (const auto& f : loo) {
      CHECK(f.size() == 1);
      seen.insert(f.front());
    }
    CHECK(seen.size() == 10);
    CHECK(cv_splits(37, 5, 4) == cv_splits(37, 5, 4));
    const auto five = cv_splits(37, 5, 4);
    std::size_t total = 0;
    for (const auto& f : five) total += f.size();
    CHECK(total == 37);
  }

  TEST_CASE("model-based AUC equals pair counting of its predictions") {
    const auto& m = toy_fit().artifact.model;
    const auto subjects = fresh_subjects(50, 21);
    const double t = 2.0, dt = 3.0;
    MetricOptions opt;
    const auto rep = auc_dynamic(m.structure, m.draws, subjects, t, dt, opt);
    double conc = 0, pairs = 0;
    std::vector<double> pi;
    for (const auto& r : subjects)
      pi.push_back(r.T >= t ? predict_survival(m.structure, m.draws, r, t, t, {t + dt}, opt)[0] : 0.0);
    std::size_t at_risk = 0;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      at_risk += subjects[i].T >= t;
      if (!(subjects[i].T > t && subjects[i].T <= t + dt && subjects[i].delta == 1)) continue;
      for (std::size_t j = 0; j < subjects.size(); ++j) {
        if (!(subjects[j].T > t + dt)) continue;
        pairs += 1;
        conc += pi[i] < pi[j];
      }
    }
    CHECK(rep.value == conc / pairs);
    CHECK(rep.at_risk == at_risk);
    CHECK_THROWS_AS(auc_dynamic(m.structure, m.draws, subjects, 50.0, 1.0, opt), Error);
  }

  TEST_CASE("integrated error with one event in the window") {
    const auto& m = toy_fit().artifact.model;
    auto subjects = fresh_subjects(80, 22);
    const double t = 2.0, hi = 6.0;
    std::vector<RawSubject> keep;
    const RawSubject* first_event = nullptr;
    for (const auto& r : subjects) {
      const bool in_window = r.delta == 1 && r.T >= t && r.T <= hi;
      if (!in_window) keep.push_back(r);
      else if (!first_event) first_event = &r;
    }
    REQUIRE(first_event != nullptr);
    keep.push_back(*first_event);
    const auto ipe = int_pred_err(m.structure, m.draws, keep, t, hi);
    const auto pe = pred_err(m.structure, m.draws, keep, t, first_event->T);
    CHECK(ipe.value == doctest::Approx(pe.value).epsilon(1e-12));
  }

  TEST_CASE("dynamic concordance on the toy fit") {
    const auto& m = toy_fit().artifact.model;
    const auto subjects = fresh_subjects(60, 23);
    const auto r = dyn_c_index(m.structure, m.draws, subjects, 2.0);
    CHECK(r.value > 0.5);
    CHECK(r.value <= 1.0);
    CHECK(r.interval_lo == 0.0);
  }
}
