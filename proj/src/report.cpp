#include "jmx/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "jmx/basis.hpp"
#include "jmx/error.hpp"

namespace jmx {

namespace {

std::string fixed(double x, int digits) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// Right-aligned text table; the first column is left-aligned.
std::string layout(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    std::string out;
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::size_t pad = width[c] - r[c].size();
      if (c == 0) out += r[c] + std::string(pad, ' ');
      else out += " " + std::string(pad, ' ') + r[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    os << out << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string abbreviate(const std::string& name) {
  if (name == "(Intercept)") return "(Intr)";
  std::string out;
  for (char c : name)
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '(' || c == ')' || c == ',') out += c;
  if (out.size() > 6) out = out.substr(0, 3) + out.substr(out.size() - 3);
  return out;
}

std::string family_text(const Family& f) {
  switch (f.kind) {
    case Family::Kind::Gaussian: return "Linear mixed-effects model";
    case Family::Kind::StudentT: return "Student's-t mixed-effects model (df = " + std::to_string(f.df) + ")";
    case Family::Kind::BinomialLogit: return "Generalized linear mixed-effects model (binomial, logit link)";
    case Family::Kind::BinomialProbit: return "Generalized linear mixed-effects model (binomial, probit link)";
    case Family::Kind::CensoredGaussian: return "Censored linear mixed-effects model";
  }
  return "";
}

std::string parameterization_text(AssociationKind k) {
  switch (k) {
    case AssociationKind::TDValue: return "Time-dependent value";
    case AssociationKind::TDExtra: return "Time-dependent extra term";
    case AssociationKind::TDBoth: return "Time-dependent value and extra term";
    case AssociationKind::SharedRE: return "Shared random effects";
    case AssociationKind::SharedBetasRE: return "Shared fixed and random effects";
  }
  return "";
}

std::string duration_text(double seconds) {
  if (seconds < 60) return fixed(seconds, 1) + " sec";
  if (seconds < 3600) return std::to_string(static_cast<long>(std::lround(seconds / 60))) + " min";
  return fixed(seconds / 3600, 1) + " hours";
}

}  // namespace

HazardRatio hazard_ratio(const Eigen::Ref<const Eigen::VectorXd>& draws, double contrast, double level) {
  if (draws.size() == 0) throw Error(ErrorCode::InvalidSpec, "hazard_ratio: no draws");
  HazardRatio hr;
  hr.estimate = std::exp(contrast * draws.mean());
  std::vector<double> t(static_cast<std::size_t>(draws.size()));
  for (Eigen::Index k = 0; k < draws.size(); ++k) t[static_cast<std::size_t>(k)] = std::exp(contrast * draws(k));
  hr.lower = quantile(t, 0.5 * (1 - level));
  hr.upper = quantile(t, 1 - 0.5 * (1 - level));
  return hr;
}

std::string format_p_value(double p) {
  if (std::isnan(p)) return "NA";
  return p < 0.001 ? "<0.001" : fixed(p, 3);
}

std::string summary_text(const FittedModel& m, double level) {
  const ModelStructure& s = m.structure;
  const ModelSpec& spec = s.spec;
  std::ostringstream os;
  os << "Model: " << m.name << "\n\n";

  os << "Data Descriptives:\n";
  os << "Longitudinal Process\t\tEvent Process\n";
  const double pct = m.n_subjects ? 100.0 * static_cast<double>(m.n_events) / static_cast<double>(m.n_subjects) : 0.0;
  os << "Number of Observations: " << m.n_obs << "\tNumber of Events: " << m.n_events << " (" << fixed(pct, 1)
     << "%)\n";
  os << "Number of subjects: " << m.n_subjects << "\n\n";

  os << "Joint Model Summary:\n";
  os << "Longitudinal Process: " << family_text(spec.family) << "\n";
  os << "Event Process: Relative risk model with "
     << (spec.penalized ? "penalized-spline-approximated \n\t\tbaseline risk function"
                        : "spline-approximated \n\t\tbaseline risk function")
     << "\n";
  os << "Parameterization: " << parameterization_text(spec.association.kind) << "\n\n";

  os << layout({"      LPML", "DIC", "pD"},
               {{fixed(m.stats.lpml, 3), fixed(m.stats.dic, 3), fixed(m.stats.pD, 3)}});
  if (std::isfinite(m.stats.marginal_loglik))
    os << "Laplace marginal log-likelihood: " << fixed(m.stats.marginal_loglik, 3) << "\n";
  os << "\n";

  const auto rows = summarize(s, m.draws, level);
  const Params mean = m.draws.mean();
  const Eigen::Index q = s.q();
  os << "Variance Components:\n";
  {
    std::vector<std::string> header{"", "StdDev"};
    if (q > 1) {
      header.push_back("Corr");
      for (Eigen::Index j = 1; j + 1 < q; ++j) header.push_back("");
    }
    std::vector<std::vector<std::string>> vc;
    for (Eigen::Index i = 0; i < q; ++i) {
      std::vector<std::string> r{s.random_names[static_cast<std::size_t>(i)],
                                 fixed(std::sqrt(mean.D(i, i)), 4)};
      if (q > 1) {
        if (i == 0) {
          for (Eigen::Index j = 0; j + 1 < q; ++j) r.push_back(abbreviate(s.random_names[static_cast<std::size_t>(j)]));
        } else {
          for (Eigen::Index j = 0; j < i; ++j)
            r.push_back(fixed(mean.D(i, j) / std::sqrt(mean.D(i, i) * mean.D(j, j)), 4));
          for (Eigen::Index j = i; j + 1 < q; ++j) r.push_back("");
        }
      }
      vc.push_back(r);
    }
    if (spec.family.scale_needed()) {
      std::vector<std::string> r{"Residual", fixed(std::sqrt(mean.sigma2), 4)};
      r.resize(vc.empty() ? 2 : vc.front().size(), "");
      vc.push_back(r);
    }
    os << layout(header, vc) << "\n";
  }

  const std::string lo = fixed(50 * (1 - level), 1) + "%";
  const std::string hi = fixed(100 - 50 * (1 - level), 1) + "%";
  auto coef_table = [&](const std::vector<std::string>& groups) {
    std::vector<std::vector<std::string>> t;
    // smoothing parameter goes last, after the baseline coefficients
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& g : groups)
        for (const auto& r : rows) {
          const bool variance = r.name == "tauBs";
          if (r.group != g || variance != (pass == 1)) continue;
          t.push_back({r.name, fixed(r.mean, 4), fixed(r.std_err, 4), fixed(r.sd, 4), fixed(r.lower, 4),
                       fixed(r.upper, 4), variance ? "NA" : format_p_value(r.p_value)});
        }
    return layout({"", "Value", "Std.Err", "Std.Dev", lo, hi, "P"}, t);
  };
  os << "Coefficients:\nLongitudinal Process\n" << coef_table({"longitudinal"}) << "\n";
  os << "Event Process\n" << coef_table({"event", "baseline"}) << "\n";

  const auto& c = spec.control;
  os << "MCMC summary:\n";
  os << "iterations: " << c.n_iter << "\n";
  os << "adapt: " << c.n_adapt << "\n";
  os << "burn-in: " << c.n_burnin << "\n";
  os << "thinning: " << m.draws.thin << "\n";
  os << "time: " << duration_text(m.elapsed_seconds) << "\n";
  if (!m.draws.acceptance.empty()) {
    os << "acceptance:";
    for (const auto& [k, v] : m.draws.acceptance) os << " " << k << "=" << fixed(v, 3);
    os << "\n";
  }
  for (const auto& w : m.draws.warnings) os << "warning: " << w << "\n";
  return os.str();
}

std::string survfit_text(const std::vector<SurvfitResult>& results, int M, bool simulate) {
  std::ostringstream os;
  os << "Prediction of Conditional Probabilities for Event\n";
  if (simulate) os << "\tbased on " << M << " Monte Carlo samples\n\n";
  else os << "\tfirst-order estimates\n\n";
  for (const auto& r : results) {
    os << "$`" << r.id << "`\n";
    std::vector<std::vector<std::string>> t;
    for (std::size_t k = 0; k < r.rows.size(); ++k) {
      const auto& row = r.rows[k];
      const std::string label = std::to_string(k == 0 ? 1 : k);
      if (simulate)
        t.push_back({label, fixed(row.time, 4), fixed(row.mean, 4), fixed(row.median, 4), fixed(row.lower, 4),
                     fixed(row.upper, 4)});
      else
        t.push_back({label, fixed(row.time, 4), fixed(row.first_order, 4)});
    }
    os << (simulate ? layout({"", "times", "Mean", "Median", "Lower", "Upper"}, t)
                    : layout({"", "times", "predSurv"}, t));
    for (const auto& w : r.warnings) os << "warning: " << w << "\n";
    os << "\n";
  }
  return os.str();
}

std::string predict_text(const std::string& id, const std::string& time_name,
                         const std::vector<PredictRow>& rows) {
  std::vector<std::vector<std::string>> t;
  for (std::size_t k = 0; k < rows.size(); ++k)
    t.push_back({std::to_string(k + 1), id, fixed(rows[k].time, 4), fixed(rows[k].pred, 4),
                 fixed(rows[k].lower, 4), fixed(rows[k].upper, 4)});
  return layout({"", "id", time_name, "pred", "low", "upp"}, t);
}

std::string metric_text(const MetricReport& r, const std::string& model_name) {
  std::ostringstream os;
  const std::string risk = "Using information up to time: " + format_number(r.tstart) + " (" +
                           std::to_string(r.at_risk) + " subjects still at risk)\n";
  if (r.metric == "AUC") {
    os << "\tTime-dependent AUC for the Joint Model " << model_name << "\n\n";
    os << "Estimated AUC: " << fixed(r.value, 3) << "\n";
    os << "At time: " << format_number(r.thoriz) << "\n" << risk;
  } else if (r.metric == "dynC") {
    os << "\tDynamic Discrimination Index for the Joint Model " << model_name << "\n\n";
    os << "Estimated dynC: " << fixed(r.value, 4) << "\n";
    os << "In the time interval: [" << format_number(r.interval_lo) << ", " << fixed(r.interval_hi, 4) << "]\n";
    os << "Length of time interval: " << format_number(r.dt) << "\n";
  } else if (r.metric == "PE") {
    os << "Prediction Error for the Joint Model " << model_name << "\n\n";
    os << "Estimated prediction error: " << fixed(r.value, 3) << "\n";
    os << "At time: " << format_number(r.thoriz) << "\n" << risk;
    os << "Loss function: " << r.loss << "\n";
  } else if (r.metric == "IPE") {
    os << "Prediction Error for the Joint Model " << model_name << "\n\n";
    os << "Estimated prediction error: " << fixed(r.value, 4) << "\n";
    os << "In the time interval: [" << format_number(r.tstart) << ", " << format_number(r.thoriz) << "]\n" << risk;
    os << "Loss function: " << r.loss << "\n";
  } else {
    os << r.metric << ": " << format_number(r.value) << "\n";
  }
  return os.str();
}

std::string cv_text(const CrossValidationResult& r, double tstart, double thoriz) {
  std::vector<std::vector<std::string>> t;
  for (std::size_t f = 0; f < r.auc.size(); ++f)
    t.push_back({std::to_string(f + 1), std::to_string(r.test_folds[f].size()), fixed(r.auc[f].value, 4),
                 fixed(r.pe[f].value, 4)});
  std::ostringstream os;
  os << "Cross-validated accuracy, information up to " << format_number(tstart) << ", horizon "
     << format_number(thoriz) << "\n\n";
  os << layout({"fold", "n", "AUC", "PE"}, t) << "\n";
  os << "mean AUC: " << fixed(r.mean_auc, 7) << "\n";
  os << "mean PE: " << fixed(r.mean_pe, 7) << "\n";
  return os.str();
}

std::string bma_weights_text(const std::vector<std::string>& names, const std::vector<double>& weights) {
  std::vector<std::vector<std::string>> t;
  for (std::size_t k = 0; k < names.size(); ++k) t.push_back({names[k], fixed(weights[k], 4)});
  return layout({"model", "weight"}, t);
}

std::string trace_csv(const ModelStructure& s, const Draws& draws) {
  const DrawTable t = draw_table(s, draws);
  std::vector<std::vector<std::string>> cols(t.names.size() + 1);
  std::vector<std::string> names{"iteration"};
  names.insert(names.end(), t.names.begin(), t.names.end());
  for (Eigen::Index k = 0; k < t.values.rows(); ++k) {
    cols[0].push_back(std::to_string((k + 1) * draws.thin));
    for (Eigen::Index c = 0; c < t.values.cols(); ++c)
      cols[static_cast<std::size_t>(c) + 1].push_back(format_number(t.values(k, c)));
  }
  return format_csv(Table(names, std::move(cols)));
}

}  // namespace jmx
