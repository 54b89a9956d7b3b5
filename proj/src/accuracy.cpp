#include "jmx/accuracy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "jmx/error.hpp"
#include "jmx/prediction.hpp"
#include "jmx/survival.hpp"

namespace jmx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = n;
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

RawSubject truncate_rows(const RawSubject& raw, double data_time) {
  RawSubject r = raw;
  r.times.clear();
  r.y_raw.clear();
  r.censor.clear();
  r.row_cov.clear();
  for (std::size_t k = 0; k < raw.times.size(); ++k) {
    if (raw.times[k] > data_time) continue;
    r.times.push_back(raw.times[k]);
    r.y_raw.push_back(raw.y_raw[k]);
    r.censor.push_back(k < raw.censor.size() ? raw.censor[k] : 0);
    r.row_cov.push_back(raw.row_cov[k]);
  }
  return r;
}

void check_times(double tstart, double later, const char* what) {
  if (!std::isfinite(tstart) || tstart < 0)
    throw Error(ErrorCode::InvalidHorizon, "Tstart must be a finite non-negative time");
  if (!std::isfinite(later) || !(later > tstart))
    throw Error(ErrorCode::InvalidHorizon, std::string(what) + " must be greater than Tstart");
}

}  // namespace

// ---------------------------------------------------------------------------

double KMCurve::at(double t) const {
  double s = 1.0;
  for (std::size_t k = 0; k < times.size() && times[k] <= t; ++k) s = surv[k];
  return s;
}

KMCurve kaplan_meier(const std::vector<double>& times, const std::vector<int>& status) {
  if (times.size() != status.size())
    throw Error(ErrorCode::BadValue, "kaplan_meier: times and status differ in length");
  for (double t : times)
    if (!(t > 0) || !std::isfinite(t)) throw Error(ErrorCode::BadValue, "kaplan_meier: times must be positive");
  std::map<double, std::pair<int, int>> by_time;   // time -> (events, removed)
  for (std::size_t i = 0; i < times.size(); ++i) {
    auto& e = by_time[times[i]];
    e.first += status[i] ? 1 : 0;
    e.second += 1;
  }
  KMCurve km;
  int at_risk = static_cast<int>(times.size());
  double s = 1.0;
  for (const auto& [t, c] : by_time) {
    if (c.first > 0) {
      s *= 1.0 - static_cast<double>(c.first) / at_risk;
      km.times.push_back(t);
      km.surv.push_back(s);
      km.at_risk.push_back(at_risk);
      km.events.push_back(c.first);
    }
    at_risk -= c.second;
  }
  return km;
}

// ---------------------------------------------------------------------------

double AucParts::value() const {
  const double den = pairs1 + pairs2;
  return den > 0 ? (concordant1 + concordant2) / den : kNaN;
}

AucParts auc_pairs(const std::vector<AucInput>& subj, double t, double dt, double tie_credit) {
  AucParts p;
  const double hi = t + dt;
  for (const auto& i : subj) {
    if (!(i.T > t && i.T <= hi)) continue;
    const bool event = i.delta == 1;
    const double w = event ? 1.0 : i.nu;
    if (!event && !(w > 0)) continue;
    for (const auto& j : subj) {
      if (&i == &j || !(j.T > hi)) continue;
      const double c = i.pi < j.pi ? 1.0 : (i.pi == j.pi ? tie_credit : 0.0);
      if (event) {
        p.concordant1 += c;
        p.pairs1 += 1;
      } else {
        p.concordant2 += c * w;
        p.pairs2 += w;
      }
    }
  }
  return p;
}

LossFunction loss_by_name(const std::string& name) {
  if (name == "square") return [](double x) { return x * x; };
  if (name == "absolute") return [](double x) { return std::abs(x); };
  throw Error(ErrorCode::Usage, "unknown loss '" + name + "' (square or absolute)");
}

double pe_from_predictions(const std::vector<PeInput>& subj, double t, double u,
                           const LossFunction& loss) {
  double total = 0;
  std::size_t n = 0;
  for (const auto& i : subj) {
    if (!(i.T >= t)) continue;
    ++n;
    if (i.T >= u) {
      total += loss(1 - i.pi_t);
    } else if (i.delta) {
      total += loss(0 - i.pi_t);
    } else {
      total += i.pi_Ti * loss(1 - i.pi_t) + (1 - i.pi_Ti) * loss(0 - i.pi_t);
    }
  }
  if (n == 0) throw Error(ErrorCode::EmptyRiskSet, "no subjects at risk at " + format_number(t));
  return total / static_cast<double>(n);
}

double dyn_c_combine(const std::vector<double>& w, const std::vector<double>& auc,
                     const std::vector<double>& pr) {
  double num = 0, den = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (!std::isfinite(auc[k])) continue;
    num += w[k] * auc[k] * pr[k];
    den += w[k] * pr[k];
  }
  return den > 0 ? num / den : kNaN;
}

// ---------------------------------------------------------------------------

std::vector<double> predict_survival(const ModelStructure& s, const Draws& draws,
                                     const RawSubject& raw, double data_time, double cond_time,
                                     const std::vector<double>& horizons,
                                     const MetricOptions& opt) {
  std::vector<double> out(horizons.size(), 1.0);
  std::vector<double> later;
  for (double u : horizons)
    if (u > cond_time) later.push_back(u);
  if (later.empty()) return out;
  std::sort(later.begin(), later.end());
  later.erase(std::unique(later.begin(), later.end()), later.end());
  const RawSubject trunc = truncate_rows(raw, data_time);
  std::map<double, double> value;
  if (opt.monte_carlo) {
    SurvfitOptions so;
    so.times = later;
    so.last_time = cond_time;
    so.M = opt.M;
    so.seed = opt.seed;
    const SurvfitResult r = survfit_dynamic(s, draws, trunc, so);
    for (std::size_t k = 1; k < r.rows.size(); ++k) value[r.rows[k].time] = r.rows[k].mean;
  } else {
    const Params mean = draws.mean();
    const SubjectData cond = conditioning_data(s, trunc, cond_time);
    const RandomEffectsMode mode = random_effects_mode(s, cond, mean);
    double H = 0, prev = cond_time;
    for (double u : later) {
      const HazardDesign d = make_interval_design(s, cond.covariates, prev, u);
      H += cumulative_hazard(s, d, cond.hazard, mean, mode.b);
      if (!std::isfinite(H))
        throw Error(ErrorCode::NonfiniteHazard, "cumulative hazard is not finite at t = " + format_number(u));
      value[u] = std::exp(-H);
      prev = u;
    }
  }
  for (std::size_t k = 0; k < horizons.size(); ++k)
    if (horizons[k] > cond_time) out[k] = value.at(horizons[k]);
  return out;
}

MetricReport auc_dynamic(const ModelStructure& s, const Draws& draws,
                         const std::vector<RawSubject>& subjects, double tstart, double dt,
                         const MetricOptions& opt) {
  check_times(tstart, tstart + dt, "Tstart + Dt");
  const double hi = tstart + dt;
  std::vector<std::size_t> risk;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].T >= tstart) risk.push_back(i);
  if (risk.empty()) throw Error(ErrorCode::EmptyRiskSet, "no subjects at risk at " + format_number(tstart));

  std::vector<AucInput> in(risk.size());
  parallel_for(risk.size(), opt.threads, [&](std::size_t k) {
    const RawSubject& r = subjects[risk[k]];
    AucInput a;
    a.T = r.T;
    a.delta = r.delta;
    a.pi = predict_survival(s, draws, r, tstart, tstart, {hi}, opt)[0];
    if (r.delta == 0 && r.T > tstart && r.T <= hi)
      a.nu = 1.0 - predict_survival(s, draws, r, tstart, r.T, {hi}, opt)[0];
    in[k] = a;
  });
  const AucParts parts = auc_pairs(in, tstart, dt, opt.tie_credit);
  if (parts.pairs1 + parts.pairs2 <= 0)
    throw Error(ErrorCode::EmptyRiskSet, "no comparable pairs in (" + format_number(tstart) + ", " +
                                             format_number(hi) + "]");
  MetricReport rep;
  rep.metric = "AUC";
  rep.value = parts.value();
  rep.tstart = tstart;
  rep.dt = dt;
  rep.thoriz = hi;
  rep.at_risk = risk.size();
  rep.pairs = static_cast<std::size_t>(parts.pairs1) + static_cast<std::size_t>(std::ceil(parts.pairs2));
  return rep;
}

MetricReport dyn_c_index(const ModelStructure& s, const Draws& draws,
                         const std::vector<RawSubject>& subjects, double dt,
                         const MetricOptions& opt) {
  if (subjects.empty()) throw Error(ErrorCode::EmptyRiskSet, "no subjects");
  if (!(dt > 0) || !std::isfinite(dt)) throw Error(ErrorCode::InvalidHorizon, "Dt must be positive");
  std::vector<double> T;
  std::vector<int> d;
  for (const auto& r : subjects) {
    T.push_back(r.T);
    d.push_back(r.delta);
  }
  const double tmax = *std::max_element(T.begin(), T.end());
  if (!(tmax > 0)) throw Error(ErrorCode::InvalidInterval, "follow-up interval is empty");
  const KMCurve km = kaplan_meier(T, d);
  const auto [nodes, weights] = rescaled_rule(gauss_kronrod(15), 0.0, tmax, 1);
  std::vector<double> w(static_cast<std::size_t>(nodes.size())), auc(w.size()), pr(w.size());
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    const double t = nodes(k);
    const auto kk = static_cast<std::size_t>(k);
    w[kk] = weights(k);
    const double s1 = km.at(t), s2 = km.at(t + dt);
    pr[kk] = (s1 - s2) * s2;
    auc[kk] = kNaN;
    if (!(pr[kk] > 0)) continue;
    try {
      auc[kk] = auc_dynamic(s, draws, subjects, t, dt, opt).value;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyRiskSet) throw;
    }
  }
  MetricReport rep;
  rep.metric = "dynC";
  rep.value = dyn_c_combine(w, auc, pr);
  if (!std::isfinite(rep.value)) throw Error(ErrorCode::EmptyRiskSet, "no node with comparable pairs");
  rep.dt = dt;
  rep.interval_lo = 0.0;
  rep.interval_hi = tmax;
  rep.at_risk = subjects.size();
  return rep;
}

MetricReport pred_err(const ModelStructure& s, const Draws& draws,
                      const std::vector<RawSubject>& subjects, double tstart, double thoriz,
                      const MetricOptions& opt) {
  check_times(tstart, thoriz, "Thoriz");
  const LossFunction loss = loss_by_name(opt.loss);
  std::vector<std::size_t> risk;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].T >= tstart) risk.push_back(i);
  if (risk.empty()) throw Error(ErrorCode::EmptyRiskSet, "no subjects at risk at " + format_number(tstart));
  std::vector<PeInput> in(risk.size());
  parallel_for(risk.size(), opt.threads, [&](std::size_t k) {
    const RawSubject& r = subjects[risk[k]];
    PeInput p;
    p.T = r.T;
    p.delta = r.delta;
    p.pi_t = predict_survival(s, draws, r, tstart, tstart, {thoriz}, opt)[0];
    if (r.delta == 0 && r.T < thoriz)
      p.pi_Ti = predict_survival(s, draws, r, tstart, r.T, {thoriz}, opt)[0];
    in[k] = p;
  });
  MetricReport rep;
  rep.metric = "PE";
  rep.value = pe_from_predictions(in, tstart, thoriz, loss);
  rep.tstart = tstart;
  rep.thoriz = thoriz;
  rep.at_risk = risk.size();
  rep.loss = opt.loss;
  return rep;
}

MetricReport int_pred_err(const ModelStructure& s, const Draws& draws,
                          const std::vector<RawSubject>& subjects, double tstart, double thoriz,
                          const MetricOptions& opt) {
  check_times(tstart, thoriz, "Thoriz");
  const LossFunction loss = loss_by_name(opt.loss);
  std::vector<double> T;
  std::vector<int> cens;
  for (const auto& r : subjects) {
    T.push_back(r.T);
    cens.push_back(1 - r.delta);
  }
  const KMCurve kmc = kaplan_meier(T, cens);
  std::vector<double> horizons;
  for (const auto& r : subjects)
    if (r.delta == 1 && r.T >= tstart && r.T <= thoriz) horizons.push_back(r.T);
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());

  std::vector<std::size_t> risk;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].T >= tstart) risk.push_back(i);
  if (risk.empty()) throw Error(ErrorCode::EmptyRiskSet, "no subjects at risk at " + format_number(tstart));
  if (horizons.empty())
    throw Error(ErrorCode::EmptyRiskSet, "no events in [" + format_number(tstart) + ", " + format_number(thoriz) + "]");

  // Per subject: predictions at every event-time horizon from tstart, and
  // from T_i for those censored inside the interval.
  std::vector<std::vector<double>> pi_t(risk.size()), pi_Ti(risk.size());
  parallel_for(risk.size(), opt.threads, [&](std::size_t k) {
    const RawSubject& r = subjects[risk[k]];
    pi_t[k] = predict_survival(s, draws, r, tstart, tstart, horizons, opt);
    if (r.delta == 0 && r.T < horizons.back())
      pi_Ti[k] = predict_survival(s, draws, r, tstart, r.T, horizons, opt);
    else
      pi_Ti[k].assign(horizons.size(), 1.0);
  });

  const double sc_t = kmc.at(tstart);
  double num = 0, den = 0;
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    const double u = horizons[h];
    std::vector<PeInput> in(risk.size());
    for (std::size_t k = 0; k < risk.size(); ++k) {
      const RawSubject& r = subjects[risk[k]];
      in[k] = PeInput{r.T, r.delta, pi_t[k][h], pi_Ti[k][h]};
    }
    const double pe = pe_from_predictions(in, tstart, u, loss);
    const double sc = kmc.at(u);
    if (!(sc > 0)) continue;
    double events = 0;
    for (const auto& r : subjects)
      if (r.delta == 1 && r.T == u) events += 1;
    const double wt = events * sc_t / sc;
    num += wt * pe;
    den += wt;
  }
  MetricReport rep;
  rep.metric = "IPE";
  rep.value = den > 0 ? num / den : kNaN;
  rep.tstart = tstart;
  rep.thoriz = thoriz;
  rep.at_risk = risk.size();
  rep.loss = opt.loss;
  return rep;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> cv_splits(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2 || static_cast<std::size_t>(folds) > n)
    throw Error(ErrorCode::Usage, "folds must be between 2 and the number of subjects");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  for (std::size_t k = 0; k < n; ++k) out[k % static_cast<std::size_t>(folds)].push_back(order[k]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

CrossValidationResult cross_validate(const ModelSpec& spec, const Table& long_table,
                                     const Table* surv_table, int folds, double tstart,
                                     double thoriz, std::uint64_t seed, int threads,
                                     const MetricOptions& opt) {
  check_times(tstart, thoriz, "Thoriz");
  ModelSpec compiled = spec;
  compiled.compile();
  const std::vector<RawSubject> all = split_subjects(compiled, long_table, surv_table, true);
  CrossValidationResult res;
  res.test_folds = cv_splits(all.size(), folds, seed);

  std::map<std::string, std::size_t> subject_index;
  for (std::size_t i = 0; i < all.size(); ++i) subject_index[all[i].id] = i;
  const auto& long_ids = long_table.column(compiled.id_col);
  const std::vector<std::string>* surv_ids = surv_table ? &surv_table->column(compiled.id_col) : nullptr;

  res.auc.resize(res.test_folds.size());
  res.pe.resize(res.test_folds.size());
  MetricOptions inner = opt;
  inner.threads = 1;
  parallel_for(res.test_folds.size(), threads, [&](std::size_t f) {
    std::vector<char> in_test(all.size(), 0);
    for (std::size_t i : res.test_folds[f]) in_test[i] = 1;
    auto rows_where = [&](const std::vector<std::string>& ids, bool test) {
      std::vector<std::size_t> rows;
      for (std::size_t r = 0; r < ids.size(); ++r)
        if (static_cast<bool>(in_test[subject_index.at(ids[r])]) == test) rows.push_back(r);
      return rows;
    };
    const Table train_long = long_table.select_rows(rows_where(long_ids, false));
    Table train_surv;
    if (surv_table) train_surv = surv_table->select_rows(rows_where(*surv_ids, false));
    ModelSpec fold_spec = compiled;
    fold_spec.control.seed = compiled.control.seed + f;
    FitOptions fo;
    fo.laplace = false;
    const FittedModel fm = fit_joint(fold_spec, train_long, surv_table ? &train_surv : nullptr, fo);
    std::vector<RawSubject> test;
    for (std::size_t i : res.test_folds[f]) test.push_back(all[i]);
    MetricOptions mo = inner;
    mo.seed = opt.seed + f;
    try {
      res.auc[f] = auc_dynamic(fm.structure, fm.draws, test, tstart, thoriz - tstart, mo);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyRiskSet) throw;
      res.auc[f].metric = "AUC";
      res.auc[f].value = kNaN;
    }
    res.pe[f] = pred_err(fm.structure, fm.draws, test, tstart, thoriz, mo);
  });
  double sa = 0, sp = 0;
  int na = 0, np = 0;
  for (std::size_t f = 0; f < res.auc.size(); ++f) {
    if (std::isfinite(res.auc[f].value)) { sa += res.auc[f].value; ++na; }
    if (std::isfinite(res.pe[f].value)) { sp += res.pe[f].value; ++np; }
  }
  res.mean_auc = na ? sa / na : kNaN;
  res.mean_pe = np ? sp / np : kNaN;
  return res;
}

}  // namespace jmx
