#pragma once

// Console layouts for fitted models, predictions and metrics.

#include <string>
#include <vector>

#include "jmx/accuracy.hpp"
#include "jmx/fit.hpp"
#include "jmx/posterior.hpp"
#include "jmx/prediction.hpp"

namespace jmx {

/// Posterior mean and interval of exp(contrast * theta); the interval
/// endpoints are quantiles of the transformed draws.
struct HazardRatio {
  double estimate = 1.0;
  double lower = 1.0;
  double upper = 1.0;
};
HazardRatio hazard_ratio(const Eigen::Ref<const Eigen::VectorXd>& draws, double contrast,
                         double level = 0.95);

/// "<0.001" below 0.001, otherwise three decimals.
std::string format_p_value(double p);

/// Descriptives, fit statistics, variance components, coefficient tables
/// and the sampler settings.
std::string summary_text(const FittedModel& m, double level = 0.95);

std::string survfit_text(const std::vector<SurvfitResult>& results, int M, bool simulate);

std::string predict_text(const std::string& id, const std::string& time_name,
                         const std::vector<PredictRow>& rows);

std::string metric_text(const MetricReport& r, const std::string& model_name);

std::string cv_text(const CrossValidationResult& r, double tstart, double thoriz);

std::string bma_weights_text(const std::vector<std::string>& names,
                             const std::vector<double>& weights);

/// Columnar trace export, one kept draw per row, header from the summary labels.
std::string trace_csv(const ModelStructure& s, const Draws& draws);

}  // namespace jmx
