#include "jmx/fit.hpp"

#include <chrono>

#include "jmx/error.hpp"

namespace jmx {

PreparedData prepare(ModelSpec spec, const Table& long_table, const Table* surv_table) {
  spec.compile();
  PreparedData out;
  out.raw = split_subjects(spec, long_table, surv_table, true);
  if (out.raw.empty()) throw Error(ErrorCode::EmptyTable, "no subjects in " + long_table.source());
  std::vector<double> long_times, obs;
  std::vector<int> events;
  for (const auto& r : out.raw) {
    long_times.insert(long_times.end(), r.times.begin(), r.times.end());
    obs.push_back(r.T);
    events.push_back(r.delta);
  }
  out.structure = make_structure(spec, long_times, obs, events,
                                 observed_levels(spec, long_table, surv_table));
  out.data = prepare_data(out.structure, out.raw, fingerprint(long_table, surv_table));
  return out;
}

std::vector<RawSubject> subjects_for(const ModelStructure& s, const Table& long_table,
                                     const Table* surv_table, bool require_event) {
  return split_subjects(s.spec, long_table, surv_table, require_event);
}

FittedModel fit_prepared(const PreparedData& prep, const FitOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  const ModelStructure& s = prep.structure;
  FittedModel fm;
  fm.structure = s;
  const InitState init = initialize(s, prep.data);
  fm.provenance = init.provenance;
  fm.notes = init.notes;
  fm.init_theta = init.theta;
  fm.proposal_cov["beta"] = init.beta_cov;
  fm.proposal_cov["gamma_alpha"] = init.gamma_alpha_cov;
  fm.proposal_cov["h0"] = init.h0_cov;
  fm.draws = run_mcmc(s, prep.data, init, s.spec.control);
  fm.notes.insert(fm.notes.end(), fm.draws.warnings.begin(), fm.draws.warnings.end());
  fm.stats = fit_stats(s, prep.data, fm.draws, opt.laplace);
  fm.fingerprint = prep.data.fingerprint;
  fm.n_subjects = prep.data.subjects.size();
  fm.n_events = prep.data.n_events;
  fm.n_obs = prep.data.n_obs;
  fm.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fm;
}

FittedModel fit_joint(const ModelSpec& spec, const Table& long_table, const Table* surv_table,
                      const FitOptions& opt) {
  return fit_prepared(prepare(spec, long_table, surv_table), opt);
}

}  // namespace jmx
