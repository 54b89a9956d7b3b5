// jmx: fit joint models, predict, score and serve them.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "jmx/accuracy.hpp"
#include "jmx/artifact.hpp"
#include "jmx/config.hpp"
#include "jmx/error.hpp"
#include "jmx/fit.hpp"
#include "jmx/posterior.hpp"
#include "jmx/prediction.hpp"
#include "jmx/report.hpp"
#include "jmx/service.hpp"
#include "jmx/simulate.hpp"

namespace {

using namespace jmx;

struct DataFlags {
  std::string long_path;
  std::string surv_path;
};

void add_data(CLI::App* cmd, DataFlags& d, bool required) {
  auto* o = cmd->add_option("--long", d.long_path, "longitudinal CSV (one row per measurement)");
  if (required) o->required();
  cmd->add_option("--surv", d.surv_path, "subject CSV (one row per subject); optional when --long has event columns");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Usage, "cannot write '" + path + "'");
  out << text;
}

Config config_with_overrides(const std::string& path, const std::vector<std::string>& sets,
                             std::optional<std::uint64_t> seed) {
  Config c = load_config(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Usage, "--set expects key=value, got '" + kv + "'");
    apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed) c.spec.control.seed = *seed;
  finalize_config(c);
  return c;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& it : items) {
    std::stringstream ss(it);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::vector<RawSubject> newdata_subjects(const ModelStructure& s, const std::string& path) {
  const Table t = read_csv(path);
  auto subjects = subjects_for(s, t, nullptr, false);
  if (subjects.empty()) throw Error(ErrorCode::EmptyTable, "no subjects in " + path);
  return subjects;
}

std::vector<RawSubject> scoring_subjects(const ModelStructure& s, const DataFlags& d) {
  const Table lt = read_csv(d.long_path);
  if (d.surv_path.empty()) return subjects_for(s, lt, nullptr, true);
  const Table st = read_csv(d.surv_path);
  return subjects_for(s, lt, &st, true);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian joint models for longitudinal and time-to-event data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  DataFlags data;
  std::string config_path, out_path, model_path, newdata_path, loss = "square", models_dir = ".",
              host = "127.0.0.1", sim_path;
  std::vector<std::string> sets, model_list, params;
  std::vector<double> times;
  std::optional<std::uint64_t> seed;
  std::optional<double> last_time, tstart, dt, thoriz;
  int M = 200, folds = 10, port = 8080, threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool no_laplace = false, first_order = false, monte_carlo = false, interval = false;
  std::string type = "subject", pinterval = "confidence", kind = "trace";

  auto* fit = app.add_subcommand("fit", "fit a joint model and write the artifact");
  add_data(fit, data, true);
  fit->add_option("--config", config_path, "model configuration")->required();
  fit->add_option("--out", out_path, "artifact path (.jmx)")->required();
  fit->add_option("--seed", seed, "sampler seed (overrides mcmc.seed)");
  fit->add_option("--set", sets, "configuration override key=value (repeatable)");
  fit->add_flag("--no-laplace", no_laplace, "skip the Laplace marginal likelihood");

  auto* summary = app.add_subcommand("summary", "posterior summary of a fitted model");
  summary->add_option("model", model_path, "artifact")->required();
  summary->add_option("--models", model_list, "further artifacts to compare by DIC/LPML");

  auto* survfit = app.add_subcommand("survfit", "dynamic conditional survival probabilities");
  survfit->add_option("model", model_path, "artifact")->required();
  survfit->add_option("--newdata", newdata_path, "measurements of the new subject(s)")->required();
  survfit->add_option("--times", times, "prediction times (default: grid after the last measurement)");
  survfit->add_option("--last-time", last_time, "time the subject is known event-free");
  survfit->add_option("--M", M, "Monte Carlo samples");
  survfit->add_option("--seed", seed, "random seed");
  survfit->add_flag("--first-order", first_order, "plug-in estimate without Monte Carlo");

  auto* predict = app.add_subcommand("predict", "longitudinal predictions");
  predict->add_option("model", model_path, "artifact")->required();
  predict->add_option("--newdata", newdata_path, "measurements of the new subject(s)")->required();
  predict->add_option("--times", times, "prediction times");
  predict->add_option("--last-time", last_time, "time the subject is known event-free");
  predict->add_option("--type", type, "subject or marginal")->check(CLI::IsMember({"subject", "marginal"}));
  predict->add_option("--interval", pinterval, "none, confidence or prediction")
      ->check(CLI::IsMember({"none", "confidence", "prediction"}));
  predict->add_option("--M", M, "Monte Carlo samples");
  predict->add_option("--seed", seed, "random seed");

  auto* auc = app.add_subcommand("auc", "time-dependent AUC");
  auc->add_option("model", model_path, "artifact")->required();
  add_data(auc, data, true);
  auc->add_option("--tstart", tstart, "information up to this time")->required();
  auto* auc_dt = auc->add_option("--dt", dt, "window length");
  auto* auc_th = auc->add_option("--thoriz", thoriz, "horizon time");
  auc_dt->excludes(auc_th);
  auc->add_flag("--mc", monte_carlo, "Monte Carlo predictions instead of first-order");
  auc->add_option("--M", M, "Monte Carlo samples");
  auc->add_option("--seed", seed, "random seed");
  auc->add_option("--threads", threads, "worker threads");

  auto* dync = app.add_subcommand("dync", "dynamic concordance index");
  dync->add_option("model", model_path, "artifact")->required();
  add_data(dync, data, true);
  dync->add_option("--dt", dt, "window length")->required();
  dync->add_flag("--mc", monte_carlo, "Monte Carlo predictions instead of first-order");
  dync->add_option("--M", M, "Monte Carlo samples");
  dync->add_option("--seed", seed, "random seed");
  dync->add_option("--threads", threads, "worker threads");

  auto* prederr = app.add_subcommand("prederr", "prediction error (or integrated with --interval)");
  prederr->add_option("model", model_path, "artifact")->required();
  add_data(prederr, data, true);
  prederr->add_option("--tstart", tstart, "information up to this time")->required();
  prederr->add_option("--thoriz", thoriz, "horizon time")->required();
  prederr->add_option("--loss", loss, "square or absolute")->check(CLI::IsMember({"square", "absolute"}));
  prederr->add_flag("--interval", interval, "integrated prediction error over [tstart, thoriz]");
  prederr->add_flag("--mc", monte_carlo, "Monte Carlo predictions instead of first-order");
  prederr->add_option("--M", M, "Monte Carlo samples");
  prederr->add_option("--seed", seed, "random seed");
  prederr->add_option("--threads", threads, "worker threads");

  auto* bma = app.add_subcommand("bma", "model-averaged survival predictions");
  bma->add_option("--models", model_list, "artifacts (comma separated or repeated)")->required();
  bma->add_option("--newdata", newdata_path, "measurements of the new subject(s)")->required();
  bma->add_option("--times", times, "prediction times");
  bma->add_option("--last-time", last_time, "time the subject is known event-free");
  bma->add_option("--M", M, "Monte Carlo samples");
  bma->add_option("--seed", seed, "random seed");

  auto* cv = app.add_subcommand("cv", "cross-validated AUC and prediction error");
  add_data(cv, data, true);
  cv->add_option("--config", config_path, "model configuration")->required();
  cv->add_option("--folds", folds, "number of folds")->check(CLI::Range(2, 100000));
  cv->add_option("--tstart", tstart, "information up to this time")->required();
  cv->add_option("--thoriz", thoriz, "horizon time")->required();
  cv->add_option("--seed", seed, "split seed");
  cv->add_option("--set", sets, "configuration override key=value (repeatable)");
  cv->add_option("--threads", threads, "parallel folds");

  auto* simulate = app.add_subcommand("simulate", "simulate data from a joint model");
  simulate->add_option("--config", sim_path, "simulation file (model config plus sim.* and truth.* keys)")
      ->required();
  simulate->add_option("--out", out_path, "output directory")->required();
  simulate->add_option("--seed", seed, "random seed");

  auto* serve = app.add_subcommand("serve", "HTTP prediction service");
  serve->add_option("--models", models_dir, "directory of .jmx artifacts");
  serve->add_option("--port", port, "port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "bind address");

  auto* diag = app.add_subcommand("diagnostics", "trace, density and autocorrelation data");
  diag->add_option("model", model_path, "artifact")->required();
  diag->add_option("--param", params, "parameter names (default: all)");
  diag->add_option("--kind", kind, "trace, density or autocorr")
      ->check(CLI::IsMember({"trace", "density", "autocorr"}));
  diag->add_option("--out", out_path, "output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const std::uint64_t rng_seed = seed.value_or(1);

    if (*fit) {
      const Config c = config_with_overrides(config_path, sets, seed);
      const Table lt = read_csv(data.long_path);
      std::optional<Table> st;
      if (!data.surv_path.empty()) st = read_csv(data.surv_path);
      FitOptions fo;
      fo.laplace = !no_laplace;
      Artifact a{c, fit_prepared(prepare(c.spec, lt, st ? &*st : nullptr), fo)};
      a.model.name = c.name;
      save_model(a, out_path);
      std::cout << summary_text(a.model);
      std::cout << "\nmodel written to " << out_path << "\n";
      return 0;
    }

    if (*summary) {
      const Artifact a = load_model(model_path);
      std::cout << summary_text(a.model);
      const auto others = split_list(model_list);
      if (!others.empty()) {
        std::vector<ModelComparison> rows{{a.model.name, a.model.stats, a.model.fingerprint}};
        for (const auto& p : others) {
          const Artifact b = load_model(p);
          rows.push_back({b.model.name, b.model.stats, b.model.fingerprint});
        }
        std::cout << "\n" << compare_models(rows);
      }
      return 0;
    }

    if (*survfit) {
      const Artifact a = load_model(model_path);
      const ModelStructure& s = a.model.structure;
      SurvfitOptions so;
      so.times = times;
      so.last_time = last_time;
      so.M = M;
      so.seed = rng_seed;
      so.simulate = !first_order;
      std::vector<SurvfitResult> res;
      for (const auto& subj : newdata_subjects(s, newdata_path)) res.push_back(survfit_dynamic(s, a.model.draws, subj, so));
      std::cout << survfit_text(res, M, so.simulate);
      return 0;
    }

    if (*predict) {
      const Artifact a = load_model(model_path);
      const ModelStructure& s = a.model.structure;
      PredictOptions po;
      po.times = times;
      po.last_time = last_time;
      po.M = M;
      po.seed = rng_seed;
      po.type = type == "marginal" ? PredictOptions::Type::Marginal : PredictOptions::Type::Subject;
      po.interval = pinterval == "none"         ? PredictOptions::Interval::None
                    : pinterval == "prediction" ? PredictOptions::Interval::Prediction
                                                : PredictOptions::Interval::Confidence;
      for (const auto& subj : newdata_subjects(s, newdata_path))
        std::cout << predict_text(subj.id, s.spec.time_col, predict_longitudinal(s, a.model.draws, subj, po)) << "\n";
      return 0;
    }

    if (*auc || *dync || *prederr) {
      const Artifact a = load_model(model_path);
      const ModelStructure& s = a.model.structure;
      const auto subjects = scoring_subjects(s, data);
      MetricOptions mo;
      mo.monte_carlo = monte_carlo;
      mo.M = M;
      mo.seed = rng_seed;
      mo.loss = loss;
      mo.threads = threads;
      MetricReport r;
      if (*auc) {
        if (!dt && !thoriz) throw Error(ErrorCode::Usage, "auc needs --dt or --thoriz");
        r = auc_dynamic(s, a.model.draws, subjects, *tstart, dt ? *dt : *thoriz - *tstart, mo);
      } else if (*dync) {
        r = dyn_c_index(s, a.model.draws, subjects, *dt, mo);
      } else if (interval) {
        r = int_pred_err(s, a.model.draws, subjects, *tstart, *thoriz, mo);
      } else {
        r = pred_err(s, a.model.draws, subjects, *tstart, *thoriz, mo);
      }
      std::cout << metric_text(r, a.model.name);
      return 0;
    }

    if (*bma) {
      const auto paths = split_list(model_list);
      std::vector<Artifact> models;
      for (const auto& p : paths) models.push_back(load_model(p));
      std::vector<std::string> names;
      for (const auto& m : models) names.push_back(m.model.name);
      bool data_evidence = true;
      for (const auto& m : models) data_evidence = data_evidence && std::isfinite(m.model.stats.marginal_loglik);
      const auto subjects = newdata_subjects(models.front().model.structure, newdata_path);
      std::vector<SurvfitResult> combined;
      for (const auto& subj : subjects) {
        const double t = last_time ? *last_time : last_measurement(subj);
        std::vector<double> grid = times.empty() ? default_survfit_grid(models.front().model.structure, t) : times;
        std::vector<double> log_ev;
        std::vector<SurvfitResult> res;
        for (const auto& m : models) {
          const ModelStructure& s = m.model.structure;
          const RawSubject raw = newdata_subjects(s, newdata_path)[static_cast<std::size_t>(&subj - subjects.data())];
          double le = subject_marginal_loglik(s, m.model.draws, raw, t);
          if (data_evidence) le += m.model.stats.marginal_loglik;
          log_ev.push_back(le);
          SurvfitOptions so;
          so.times = grid;
          so.last_time = t;
          so.M = M;
          so.seed = rng_seed;
          res.push_back(survfit_dynamic(s, m.model.draws, raw, so));
        }
        const auto w = bma_weights(log_ev);
        std::cout << "Posterior model weights for subject " << subj.id
                  << (data_evidence ? "" : " (subject evidence only)") << "\n"
                  << bma_weights_text(names, w) << "\n";
        combined.push_back(bma_combine(res, w));
      }
      std::cout << survfit_text(combined, M, true);
      return 0;
    }

    if (*cv) {
      const Config c = config_with_overrides(config_path, sets, std::nullopt);
      const Table lt = read_csv(data.long_path);
      std::optional<Table> st;
      if (!data.surv_path.empty()) st = read_csv(data.surv_path);
      const auto r = cross_validate(c.spec, lt, st ? &*st : nullptr, folds, *tstart, *thoriz, rng_seed, threads);
      std::cout << cv_text(r, *tstart, *thoriz);
      return 0;
    }

    if (*simulate) {
      const SimulationSpec sim = load_simulation(sim_path);
      const SimulationResult r = simulate_joint(sim, rng_seed);
      std::filesystem::create_directories(out_path);
      const std::filesystem::path dir(out_path);
      write_csv(r.long_table, (dir / "long.csv").string());
      write_csv(r.surv_table, (dir / "surv.csv").string());
      write_text((dir / "truth.json").string(), truth_json(sim, r));
      std::size_t events = 0;
      for (const auto& d : r.surv_table.column(sim.spec.event_col)) events += d == "1";
      std::cout << "simulated " << r.surv_table.rows() << " subjects, " << r.long_table.rows()
                << " measurements, " << events << " events into " << out_path << "\n";
      return 0;
    }

    if (*serve) {
      ModelService svc(models_dir);
      std::cerr << "serving " << models_dir << " on http://" << host << ":" << port << "\n";
      svc.serve(host, port);
      return 0;
    }

    if (*diag) {
      const Artifact a = load_model(model_path);
      const auto d = diagnostics_export(a.model.structure, a.model.draws, params);
      std::vector<std::string> names;
      std::vector<std::vector<std::string>> cols(3);
      const std::string xname = kind == "trace" ? "iteration" : kind == "density" ? "x" : "lag";
      const std::string yname = kind == "trace" ? "value" : kind == "density" ? "density" : "acf";
      for (const auto& p : d) {
        const std::size_t n = kind == "trace" ? p.trace.size() : kind == "density" ? p.density_x.size() : p.autocorrelation.size();
        for (std::size_t k = 0; k < n; ++k) {
          cols[0].push_back(p.name);
          if (kind == "trace") {
            cols[1].push_back(std::to_string((k + 1) * static_cast<std::size_t>(a.model.draws.thin)));
            cols[2].push_back(format_number(p.trace[k]));
          } else if (kind == "density") {
            cols[1].push_back(format_number(p.density_x[k]));
            cols[2].push_back(format_number(p.density_y[k]));
          } else {
            cols[1].push_back(std::to_string(k));
            cols[2].push_back(format_number(p.autocorrelation[k]));
          }
        }
      }
      write_text(out_path, format_csv(Table({"parameter", xname, yname}, std::move(cols))));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "jmx: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "jmx: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
