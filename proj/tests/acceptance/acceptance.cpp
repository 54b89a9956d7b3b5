// One PASS/FAIL line per acceptance criterion. Optional arguments select
// criteria by label (e.g. `jmx_acceptance P1 P7`).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "jmx/accuracy.hpp"
#include "jmx/artifact.hpp"
#include "jmx/posterior.hpp"
#include "jmx/prediction.hpp"
#include "jmx/report.hpp"
#include "jmx/survival.hpp"
#include "support.hpp"

using namespace jmx;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string data_file(const std::string& name) { return std::string(JMX_DATA_DIR) + "/" + name; }

int threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double kolmogorov_tail(double x) {
  double s = 0;
  for (int k = 1; k <= 100; ++k) s += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(s, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

void quadrature(Outcome& o) {
  const auto gk = gauss_kronrod(15), gl = gauss_legendre(15), gk7 = gauss_kronrod(7);
  struct Case {
    const char* name;
    std::function<double(double)> f;
    double a, b, exact;
  };
  const std::vector<Case> cases{
      {"x^2", [](double x) { return x * x; }, 0.0, 1.0, 1.0 / 3.0},
      {"x^2", [](double x) { return x * x; }, -2.0, 3.0, 35.0 / 3.0},
      {"exp", [](double x) { return std::exp(x); }, 0.0, 1.0, std::exp(1.0) - 1.0},
      {"exp", [](double x) { return std::exp(x); }, -1.0, 2.0, std::exp(2.0) - std::exp(-1.0)},
      {"sin", [](double x) { return std::sin(x); }, 0.0, std::numbers::pi, 2.0},
      {"sin", [](double x) { return std::sin(x); }, 0.5, 2.0, std::cos(0.5) - std::cos(2.0)},
  };
  double worst = 0, worst7 = 0;
  for (const auto& c : cases) {
    const double a = integrate(c.f, c.a, c.b, gk), b = integrate(c.f, c.a, c.b, gl);
    worst = std::max({worst, std::abs(a - c.exact), std::abs(b - c.exact)});
    worst7 = std::max(worst7, std::abs(integrate(c.f, c.a, c.b, gk7) - a));
  }
  o.require(worst < 1e-10, "GK15/GL15 error " + std::to_string(worst));
  o.require(worst7 < 1e-8, "GK7 vs GK15 " + std::to_string(worst7));
  o.detail << "max error " << worst << ", GK7 vs GK15 " << worst7;
}

void splines(Outcome& o) {
  const KnotVector kv{{1.0, 2.0, 3.5, 5.0, 7.5, 9.0}, 0.0, 10.0, 3};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  double pou = 0;
  for (int k = 0; k < 10000; ++k) pou = std::max(pou, std::abs(bspline_basis(u(rng), kv).sum() - 1.0));
  o.require(pou < 1e-12, "partition of unity");

  const std::vector<double> inner{3.0, 6.0};
  const std::pair<double, double> bnd{0.0, 10.0};
  auto ns = [&](double t) { return natural_cubic_basis<double>(t, 3, bnd, inner); };
  double tail = 0;
  const double h = 1e-3;
  for (double t : {-5.0, -0.5, 10.5, 15.0})
    tail = std::max(tail, ((ns(t + h) - 2.0 * ns(t) + ns(t - h)) / (h * h)).cwiseAbs().maxCoeff());
  o.require(tail < 1e-6, "linear tails");

  double ftc = 0;
  const auto rule = gauss_kronrod(15);
  for (int j = 0; j < 3; ++j) {
    const double v = integrate([&](double t) { return natural_cubic_deriv<double>(t, 3, bnd, inner)(j); }, 0.5, 9.0,
                               rule, 8);
    ftc = std::max(ftc, std::abs(v - (ns(9.0)(j) - ns(0.5)(j))));
    const double t = 7.3, e = 1e-4;
    const double d = (natural_cubic_integral<double>(t + e, 3, bnd, inner)(j) -
                      natural_cubic_integral<double>(t - e, 3, bnd, inner)(j)) /
                     (2 * e);
    ftc = std::max(ftc, std::abs(d - ns(t)(j)));
  }
  o.require(ftc < 1e-5, "derivative/integral round trip");
  o.detail << "unity " << pou << ", tail curvature " << tail << ", round trip " << ftc;
}

void constant_hazard(Outcome& o) {
  const double lambda = 0.2;
  const auto sim = parse_simulation(jmx::testing::constant_hazard_text(std::log(lambda)));
  const auto s = simulation_structure(sim);
  double worst = 0;
  for (double t : {0.0, 0.5, 2.0, 5.0, 12.0}) {
    const double S = survival_function(s, {{"x", "0.3"}}, sim.truth, Eigen::VectorXd::Zero(1), t);
    worst = std::max(worst, std::abs(S - std::exp(-lambda * t)));
  }
  o.require(worst < 1e-8, "survival function");

  const auto r = simulate_joint(sim, 2024);
  auto T = r.surv_table.numbers("Time");
  std::sort(T.begin(), T.end());
  const double n = static_cast<double>(T.size());
  double dmax = 0;
  for (std::size_t i = 0; i < T.size(); ++i) {
    const double F = 1.0 - std::exp(-lambda * T[i]);
    dmax = std::max({dmax, (i + 1) / n - F, F - i / n});
  }
  const double p = kolmogorov_tail(std::sqrt(n) * dmax);
  o.require(T.size() == 5000, "n = 5000");
  o.require(p > 0.01, "KS p-value " + fmt(p));
  o.detail << "max |S - exp(-lt)| " << worst << ", KS D " << fmt(dmax) << " p " << fmt(p, 3);
}

void conjugate(Outcome& o) {
  const std::string text = jmx::testing::conjugate_text(200, 20000, 4000);
  const auto data = simulate_joint(parse_simulation(text), 17);
  const Config c = parse_config(text);
  const auto prep = prepare(c.spec, data.long_table, &data.surv_table);
  const auto fit = fit_prepared(prep, FitOptions{false});
  const auto g =
      jmx::testing::conjugate_beta_posterior(prep.data, 0.25, Eigen::MatrixXd::Constant(1, 1, 0.5), c.spec.prior.v0);
  const auto sum = summarize(prep.structure, fit.draws);
  for (Eigen::Index k = 0; k < g.mean.size(); ++k) {
    const auto& ps = sum[static_cast<std::size_t>(k)];
    const double z = (ps.mean - g.mean(k)) / ps.std_err;
    o.require(std::abs(z) < 3.0, "beta[" + std::to_string(k) + "] z = " + fmt(z, 2));
    o.detail << "beta" << k << " z " << fmt(z, 2) << ", ";
  }

  const int n = 50;
  const double rss = 20.0, a0 = 0.01, b0 = 0.01;
  Rng rng(3);
  double s2 = 1.0, total = 0;
  for (int k = 0; k < 20000; ++k) {
    s2 = slice_update_precision(s2, [&](double v) { return -0.5 * n * std::log(v) - 0.5 * rss / v; }, a0, b0, rng);
    total += s2;
  }
  const double rel = std::abs(total / 20000 / ((b0 + rss / 2) / (a0 + n / 2.0 - 1)) - 1.0);
  o.require(rel < 0.02, "slice mean");

  Eigen::Matrix3d D;
  D << 1.0, 0.2, -0.1, 0.2, 0.6, 0.05, -0.1, 0.05, 0.3;
  const Eigen::Matrix3d L = D.llt().matrixL();
  std::normal_distribution<double> z;
  Eigen::MatrixXd b(5000, 3);
  for (Eigen::Index i = 0; i < b.rows(); ++i) b.row(i) = (L * Eigen::Vector3d(z(rng), z(rng), z(rng))).transpose();
  Eigen::Matrix3d avg = Eigen::Matrix3d::Zero();
  for (int k = 0; k < 1000; ++k) avg += gibbs_wishart_D(b, 4.0, 100.0 * Eigen::MatrixXd::Identity(3, 3), rng).inverse();
  avg /= 1000;
  const double frob = (avg - D).norm() / D.norm();
  o.require(frob < 0.05, "Wishart recovery");
  o.detail << "slice rel. error " << fmt(rel) << ", Wishart Frobenius " << fmt(frob);
}

void recovery(Outcome& o) {
  const auto sim = load_simulation(data_file("sim/tdvalue.sim"));
  const Config c = load_config(data_file("sim/tdvalue.sim"));
  const auto data = simulate_joint(sim, 7);
  const auto fit = fit_joint(c.spec, data.long_table, &data.surv_table, FitOptions{false});
  const auto& d = fit.draws;
  int checked = 0, worst_i = -1;
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, const Eigen::VectorXd& draws, double truth) {
    const double sd = std::sqrt((draws.array() - draws.mean()).square().sum() / (draws.size() - 1));
    const double z = std::abs(draws.mean() - truth) / sd;
    ++checked;
    if (z > worst) {
      worst = z;
      worst_name = name;
      worst_i = checked;
    }
    o.require(z <= 3.0, name + " off by " + fmt(z, 2) + " SD");
  };
  for (Eigen::Index k = 0; k < d.beta.cols(); ++k) check("beta" + std::to_string(k), d.beta.col(k), sim.truth.beta(k));
  check("sigma2", d.sigma2, sim.truth.sigma2);
  const Eigen::Index q = sim.truth.D.rows();
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = j; i < q; ++i) check("D" + std::to_string(i) + std::to_string(j), d.D.col(j * q + i), sim.truth.D(i, j));
  for (Eigen::Index k = 0; k < d.gamma.cols(); ++k) check("gamma" + std::to_string(k), d.gamma.col(k), sim.truth.gamma(k));
  for (Eigen::Index k = 0; k < d.alpha.cols(); ++k) check("alpha" + std::to_string(k), d.alpha.col(k), sim.truth.alpha(k));
  // constant true log baseline: every B-spline coefficient equals it
  for (Eigen::Index k = 0; k < d.gammas_h0.cols(); ++k)
    check("h0_" + std::to_string(k), d.gammas_h0.col(k), sim.truth.gammas_h0(0));
  for (const auto& [block, rate] : d.acceptance) {
    o.require(rate >= 0.1 && rate <= 0.6, "acceptance " + block + " = " + fmt(rate, 3));
    o.detail << block << " " << fmt(rate, 3) << " ";
  }
  o.detail << "| " << checked << " parameters, largest deviation " << fmt(worst, 2) << " SD (" << worst_name
           << "), alpha mean " << fmt(d.alpha.col(0).mean(), 3);
  (void)worst_i;
}

void metric_oracles(Outcome& o) {
  const auto& toy = jmx::testing::toy_fit();
  const auto& m = toy.artifact.model;
  SimulationSpec sim = toy.sim;
  sim.n = 50;
  sim.censor_rate = 0.0;
  sim.admin_time = std::numeric_limits<double>::infinity();
  sim.truth.D(0, 1) = sim.truth.D(1, 0) = 0.0;
  sim.truth.D(1, 1) = 1e-4;   // rising trajectories only: nobody is cured
  const auto data = simulate_joint(sim, 31);
  const auto subjects = subjects_for(m.structure, data.long_table, &data.surv_table, true);
  bool uncensored = true;
  for (const auto& r : subjects) uncensored = uncensored && r.delta == 1;
  o.require(uncensored, "synthetic data uncensored");
  const double t = 1.0, dt = 3.0;
  MetricOptions opt;
  const auto rep = auc_dynamic(m.structure, m.draws, subjects, t, dt, opt);
  std::vector<double> pi(subjects.size(), 0.0);
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].T >= t) pi[i] = predict_survival(m.structure, m.draws, subjects[i], t, t, {t + dt}, opt)[0];
  double conc = 0, pairs = 0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (!(subjects[i].T > t && subjects[i].T <= t + dt)) continue;
    for (std::size_t j = 0; j < subjects.size(); ++j)
      if (subjects[j].T > t + dt) {
        pairs += 1;
        conc += pi[i] < pi[j] ? 1.0 : 0.0;
      }
  }
  o.require(rep.value == conc / pairs, "AUC vs exhaustive count");

  const auto km = kaplan_meier({1, 2, 2, 3, 5, 6}, {1, 0, 1, 1, 0, 1});
  // hand product limit: risk sets 6, 5, 3, 1 at the event times 1, 2, 3, 6
  const double s1 = 1.0 - 1.0 / 6.0, s2 = s1 * (1.0 - 1.0 / 5.0), s3 = s2 * (1.0 - 1.0 / 3.0);
  const std::vector<double> hand{s1, s2, s3, 0.0};
  bool km_ok = km.surv == hand && km.at(2.5) == s2 && km.at(0.5) == 1.0;
  o.require(km_ok, "Kaplan-Meier");

  std::vector<PeInput> perfect;
  for (const auto& r : subjects) perfect.push_back(PeInput{r.T, 1, r.T >= 4.0 ? 1.0 : 0.0, 0.0});
  const double pe = pe_from_predictions(perfect, 1.0, 4.0, loss_by_name("square"));
  o.require(pe == 0.0, "perfect PE");

  const std::vector<double> w{0.2, 0.1, 0.4, 0.3}, pr{0.3, 0.9, 0.2, 0.6};
  const double c = dyn_c_combine(w, {0.81, 0.81, 0.81, 0.81}, pr);
  o.require(std::abs(c - 0.81) < 1e-12, "dynC of constant AUC");
  o.detail << "AUC " << fmt(rep.value) << " = " << conc << "/" << pairs << ", KM " << (km_ok ? "exact" : "mismatch") << ", PE " << pe << ", dynC "
           << std::abs(c - 0.81);
}

// PBC fits are shared by P7 and P9.
struct PbcState {
  std::optional<Artifact> pbc1, pbc15;
  Table lt, st;
};
PbcState& pbc() {
  static PbcState s;
  if (!s.pbc1) {
    s.lt = read_csv(data_file("pbc/pbc2_long.csv"));
    s.st = read_csv(data_file("pbc/pbc2_surv.csv"));
    for (const char* name : {"pbc1", "pbc15"}) {
      Artifact a;
      a.config = load_config(data_file(std::string("pbc/") + name + ".cfg"));
      a.model = fit_joint(a.config.spec, s.lt, &s.st);
      a.model.name = a.config.name;
      (std::string(name) == "pbc1" ? s.pbc1 : s.pbc15) = std::move(a);
    }
  }
  return s;
}

void pbc_reproduction(Outcome& o) {
  auto& p = pbc();
  const auto& m1 = p.pbc1->model;
  const auto sum = summarize(m1.structure, m1.draws);
  const auto it = std::find_if(sum.begin(), sum.end(), [](const ParamSummary& s) { return s.name == "Assoct"; });
  const double assoc = it->mean;
  o.require(assoc >= 1.2393 && assoc <= 1.6193, "Assoct " + fmt(assoc));
  const auto hr = hazard_ratio(m1.draws.alpha.col(0), std::log(2.0));
  o.require(hr.estimate >= 2.3 && hr.estimate <= 3.1, "doubling HR " + fmt(hr.estimate, 2));
  o.detail << "Assoct " << fmt(assoc) << ", HR(x2) " << fmt(hr.estimate, 2) << " (" << fmt(hr.lower, 2) << "; "
           << fmt(hr.upper, 2) << ")";

  const auto& m = p.pbc15->model;
  const auto subjects = subjects_for(m.structure, p.lt, &p.st, true);
  MetricOptions opt;
  opt.threads = threads();
  const double auc = auc_dynamic(m.structure, m.draws, subjects, 5.0, 2.0, opt).value;
  const double dync = dyn_c_index(m.structure, m.draws, subjects, 2.0, opt).value;
  const double pe = pred_err(m.structure, m.draws, subjects, 5.0, 7.0, opt).value;
  const double ipe = int_pred_err(m.structure, m.draws, subjects, 5.0, 9.0, opt).value;
  o.require(std::abs(auc - 0.842) <= 0.04, "AUC " + fmt(auc));
  o.require(std::abs(dync - 0.8496) <= 0.04, "dynC " + fmt(dync));
  o.require(std::abs(pe - 0.107) <= 0.02, "PE " + fmt(pe));
  o.require(std::abs(ipe - 0.0907) <= 0.02, "IPE " + fmt(ipe));
  o.detail << ", AUC(5,2) " << fmt(auc, 3) << ", dynC " << fmt(dync) << ", PE(5,7) " << fmt(pe, 3) << ", IPE(5,9) "
           << fmt(ipe) << ", fit times " << fmt(p.pbc1->model.elapsed_seconds, 1) << "s/"
           << fmt(m.elapsed_seconds, 1) << "s";
}

void cross_validation(Outcome& o) {
  const Config c = load_config(data_file("pbc/pbc15.cfg"));
  const Table lt = read_csv(data_file("pbc/pbc2_long.csv"));
  const Table st = read_csv(data_file("pbc/pbc2_surv.csv"));
  const auto r = cross_validate(c.spec, lt, &st, 10, 5.0, 7.0, 1, threads());
  o.require(std::abs(r.mean_auc - 0.840) <= 0.05, "mean AUC " + fmt(r.mean_auc));
  o.require(std::abs(r.mean_pe - 0.123) <= 0.03, "mean PE " + fmt(r.mean_pe));
  o.detail << "mean AUC " << fmt(r.mean_auc) << ", mean PE " << fmt(r.mean_pe) << " over " << r.auc.size() << " folds";
}

void prediction_contracts(Outcome& o) {
  auto& p = pbc();
  std::vector<const Artifact*> models{&*p.pbc1, &*p.pbc15, &jmx::testing::toy_fit().artifact};
  const auto pbc_subjects = subjects_for(p.pbc1->model.structure, p.lt, nullptr, false);
  int curves = 0;
  for (const Artifact* a : models) {
    const auto& m = a->model;
    const bool is_pbc = a != models.back();
    const auto subjects = is_pbc ? pbc_subjects
                                 : subjects_for(m.structure, jmx::testing::toy_fit().data.long_table, nullptr, false);
    for (std::size_t i : {std::size_t{1}, std::size_t{7}, std::size_t{20}}) {
      for (bool mc : {true, false}) {
        SurvfitOptions opt;
        opt.simulate = mc;
        opt.M = 100;
        const auto r = survfit_dynamic(m.structure, m.draws, subjects[i], opt);
        const auto& first = r.rows.front();
        o.require(first.mean == 1.0 && first.median == 1.0 && first.lower == 1.0 && first.upper == 1.0 &&
                      first.first_order == 1.0,
                  "pi(t|t) = 1 for " + m.name);
        for (std::size_t k = 1; k < r.rows.size(); ++k)
          o.require(r.rows[k].first_order <= r.rows[k - 1].first_order, "first-order monotone for " + m.name);
        ++curves;
      }
    }
  }

  const auto& m1 = p.pbc1->model;
  const auto& m15 = p.pbc15->model;
  double worst = 0;
  for (std::size_t i : {std::size_t{1}, std::size_t{50}, std::size_t{200}}) {
    const double t = last_measurement(pbc_subjects[i]);
    const std::vector<double> ll{
        subject_marginal_loglik(m1.structure, m1.draws, pbc_subjects[i], t) + m1.stats.marginal_loglik,
        subject_marginal_loglik(m15.structure, m15.draws, pbc_subjects[i], t) + m15.stats.marginal_loglik};
    const auto w = bma_weights(ll);
    worst = std::max(worst, std::abs(w[0] + w[1] - 1.0));
  }
  o.require(worst < 1e-12, "BMA weights sum to one");

  const std::string text = artifact_text(*p.pbc15);
  const Artifact back = parse_artifact(text);
  o.require(artifact_text(back) == text, "save/load/save identical");
  SurvfitOptions opt;
  opt.M = 200;
  opt.seed = 123;
  const auto a = survfit_dynamic(m15.structure, m15.draws, pbc_subjects[1], opt);
  const auto b = survfit_dynamic(back.model.structure, back.model.draws, pbc_subjects[1], opt);
  bool same = a.rows.size() == b.rows.size();
  for (std::size_t k = 0; same && k < a.rows.size(); ++k)
    same = a.rows[k].mean == b.rows[k].mean && a.rows[k].median == b.rows[k].median &&
           a.rows[k].lower == b.rows[k].lower && a.rows[k].upper == b.rows[k].upper;
  o.require(same, "round-trip prediction bitwise");
  o.detail << curves << " curves start at 1, BMA sum error " << worst << ", round trip bitwise";
}

struct Criterion {
  std::string label;
  std::string title;
  double budget_seconds;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"P1", "quadrature oracle", 1, quadrature},
      {"P2", "spline properties", 5, splines},
      {"P3", "constant-hazard oracle", 30, constant_hazard},
      {"P4", "conjugate MCMC oracle", 120, conjugate},
      {"P5", "simulation recovery", 600, recovery},
      {"P6", "metric oracles", 30, metric_oracles},
      {"P7", "PBC reproduction", 1200, pbc_reproduction},
      {"P8", "cross-validation", 3 * 3600, cross_validation},
      {"P9", "prediction contracts", 60, prediction_contracts},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.label)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [error: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) o.require(false, "runtime " + fmt(secs, 1) + "s over " + fmt(c.budget_seconds, 0) + "s");
    failures += o.pass ? 0 : 1;
    std::cout << c.label << " " << (o.pass ? "PASS" : "FAIL") << "  " << c.title << ": " << o.detail.str() << " ("
              << fmt(secs, 1) << "s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
